"""Flat key = value experiment configuration.

The format is UTF-8 text, one ``key = value`` pair per line, ``#`` comments,
order-independent, duplicate and unknown keys rejected. ``echo()`` emits a
canonical (sorted) rendering that parses back to an equal config.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ConfigError

KNOWN_KEYS = frozenset(
    {
        "task",
        "schedule",
        "output.dir",
        "output.checkpoint",
        "operator.kind",
        "operator.rate",
        "operator.mask_fraction",
        "operator.blur_sigma",
        "operator.blur_kernel",
        "operator.factor",
        "operator.sigma_y",
        "operator.seed",
        "operator.sign_seed",
        "solver.variant",
        "solver.n_steps",
        "solver.inner_iters",
        "solver.step_size",
        "solver.guidance_weight",
        "solver.exact_weight",
        "solver.seed",
        "solver.outer_iters",
        "prior.kind",
        "prior.dim",
        "prior.seed",
        "prior.checkpoint",
        "prior.hidden",
        "dataset.kind",
        "dataset.count",
        "dataset.seed",
        "dataset.height",
        "dataset.width",
        "dataset.cell",
        "dataset.n_blobs",
        "training.steps",
        "training.batch",
        "training.lr",
        "training.seed",
    }
)

TASKS = ("train", "denoise_gaussian_toy", "image_recon")


@dataclass
class ExperimentConfig:
    values: dict[str, str] = field(default_factory=dict)

    def __eq__(self, other):
        return isinstance(other, ExperimentConfig) and self.values == other.values

    def has(self, key: str) -> bool:
        return key in self.values

    def _get(self, key: str, default):
        if key in self.values:
            return self.values[key]
        if default is _REQUIRED:
            raise ConfigError(f"missing required config key {key!r}")
        return default

    def get_str(self, key: str, default=None) -> str:
        v = self._get(key, _REQUIRED if default is None else default)
        return v

    def get_int(self, key: str, default=None) -> int:
        v = self._get(key, _REQUIRED if default is None else default)
        if isinstance(v, int):
            return v
        try:
            return int(v)
        except ValueError:
            raise ConfigError(f"config key {key!r}: {v!r} is not an integer") from None

    def get_float(self, key: str, default=None) -> float:
        v = self._get(key, _REQUIRED if default is None else default)
        if isinstance(v, float):
            return v
        try:
            return float(v)
        except ValueError:
            raise ConfigError(f"config key {key!r}: {v!r} is not a number") from None

    def get_bool(self, key: str, default=None) -> bool:
        v = self._get(key, _REQUIRED if default is None else default)
        if isinstance(v, bool):
            return v
        if v in ("true", "1", "yes"):
            return True
        if v in ("false", "0", "no"):
            return False
        raise ConfigError(f"config key {key!r}: {v!r} is not a boolean")

    def echo(self) -> str:
        lines = [f"{k} = {self.values[k]}" for k in sorted(self.values)]
        return "\n".join(lines) + "\n"


class _Required:
    pass


_REQUIRED = _Required()


def parse_config(text: str) -> ExperimentConfig:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in KNOWN_KEYS:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate config key {key!r}")
        if not value:
            raise ConfigError(f"line {lineno}: empty value for {key!r}")
        values[key] = value
    return ExperimentConfig(values)


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as f:
        return parse_config(f.read())
