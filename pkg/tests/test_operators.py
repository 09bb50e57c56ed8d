import numpy as np
import pytest

from flowmap.errors import ConfigError, ShapeError
from flowmap.operators import (
    BlurGaussian,
    DftSubsampled,
    DownsampleAvg,
    Identity,
    MaskKeep,
    MeasurementModel,
    make_operator,
    mask_box_centered,
    mask_random,
    measure,
)
from flowmap.tensor import Rng


def shipped_operators():
    return {
        "identity": Identity((16,)),
        "mask_random": mask_random((8, 8), 0.7, seed=4),
        "mask_box": mask_box_centered(16, 16),
        "downsample_avg": DownsampleAvg(16, 16, 2),
        "blur_gaussian": BlurGaussian(16, 16, 7, 1.5),
        "dft_subsampled": DftSubsampled(64, 0.5, seed=7, sign_seed=8),
    }


class TestAdjointAndLinearity:
    @pytest.mark.parametrize("name", list(shipped_operators().keys()))
    def test_adjoint_identity(self, name):
        op = shipped_operators()[name]
        rng = Rng(3)
        for _ in range(100):
            x = rng.normal(op.in_dim)
            u = rng.normal(op.out_dim)
            lhs = op.apply(x) @ u
            rhs = x @ op.adjoint(u)
            assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), 1.0)

    @pytest.mark.parametrize("name", list(shipped_operators().keys()))
    def test_linearity(self, name):
        op = shipped_operators()[name]
        rng = Rng(9)
        x, z = rng.normal(op.in_dim), rng.normal(op.in_dim)
        a, b = 1.7, -0.4
        combined = op.apply(a * x + b * z)
        separate = a * op.apply(x) + b * op.apply(z)
        assert np.max(np.abs(combined - separate)) <= 1e-12 * max(1.0, np.max(np.abs(separate)))


class TestMasks:
    def test_keep_and_zero_fill(self):
        op = MaskKeep((3,), np.array([0, 2]), "mask_random")
        assert np.array_equal(op.apply(np.array([5.0, 6.0, 7.0])), [5.0, 7.0])
        assert np.array_equal(op.adjoint(np.array([5.0, 7.0])), [5.0, 0.0, 7.0])

    @pytest.mark.parametrize("fraction,n", [(0.7, 100), (0.5, 64), (0.3, 17)])
    def test_mask_random_keep_count(self, fraction, n):
        op = mask_random((n,), fraction, seed=1)
        assert op.out_dim == round((1 - fraction) * n)

    def test_centered_box_is_half_side(self):
        op = mask_box_centered(16, 16)
        assert op.out_dim == 16 * 16 - 8 * 8


class TestDftSubsampled:
    def test_delta_spectrum_flat(self):
        op = DftSubsampled(8, 1.0, seed=1, sign_seed=2)
        e0 = np.zeros(8)
        e0[0] = 1.0
        mags = np.abs(op.apply(e0))
        assert np.max(np.abs(mags - 1.0 / np.sqrt(8))) <= 1e-12

    def test_rows_orthonormal(self):
        op = DftSubsampled(64, 0.5, seed=7, sign_seed=8)
        gram = op._mat @ op._mat.T
        assert np.max(np.abs(gram - np.eye(op.out_dim))) <= 1e-10

    def test_fast_path_matches_direct(self):
        n = 128
        direct = DftSubsampled(n, 0.25, seed=5, sign_seed=6)
        fast = DftSubsampled(n, 0.25, seed=5, sign_seed=6)
        fast._mat = None  # force the transform path
        x = Rng(2).normal(n)
        assert np.max(np.abs(direct.apply(x) - fast.apply(x))) <= 1e-10
        g = Rng(3).normal(direct.out_dim)
        assert np.max(np.abs(direct.adjoint(g) - fast.adjoint(g))) <= 1e-10

    def test_measurement_count(self):
        op = DftSubsampled(100, 0.25, seed=0, sign_seed=0)
        assert op.out_dim == 25


class TestDownsampleAndBlur:
    def test_average_preserves_constants(self):
        op = DownsampleAvg(8, 8, 2)
        out = op.apply(np.ones(64))
        assert np.max(np.abs(out - 1.0)) <= 1e-14

    def test_factor_must_divide(self):
        with pytest.raises(ShapeError):
            DownsampleAvg(9, 9, 2)

    def test_blur_preserves_constants(self):
        op = BlurGaussian(16, 16, 5, 1.0)
        assert np.max(np.abs(op.apply(np.ones(256)) - 1.0)) <= 1e-12

    def test_blur_kernel_normalized(self):
        op = BlurGaussian(16, 16, 9, 2.0)
        assert op.kernel.sum() == pytest.approx(1.0, abs=1e-14)


class TestMakeOperator:
    def test_identity(self):
        op = make_operator("identity", shape=(3,))
        assert np.array_equal(op.apply(np.array([1.0, 2.0, 3.0])), [1.0, 2.0, 3.0])

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            make_operator("warp_drive")

    def test_missing_param(self):
        with pytest.raises(ConfigError):
            make_operator("mask_random", shape=(10,))

    def test_all_kinds_constructible(self):
        make_operator("mask_random", shape=(10,), fraction=0.5, seed=0)
        make_operator("mask_box", height=16, width=16)
        make_operator("mask_box", height=16, width=16, top=2, left=3, box_h=4, box_w=5)
        make_operator("downsample_avg", height=8, width=8, factor=2)
        make_operator("blur_gaussian", height=16, width=16, kernel_size=5, sigma=1.0)
        make_operator("dft_subsampled", n=32, rate=0.5, seed=0, sign_seed=1)


class TestMeasure:
    def test_noiseless(self):
        model = MeasurementModel(Identity((4,)), 0.0)
        x = np.array([1.0, 2.0, 3.0, 4.0])
        assert np.array_equal(measure(model, x, Rng(0)), x)

    def test_noise_moment(self):
        model = MeasurementModel(Identity((8,)), 0.1)
        x = np.zeros(8)
        rng = Rng(4)
        draws = np.stack([measure(model, x, rng) for _ in range(10**4)])
        stds = draws.std(axis=0)
        assert np.max(np.abs(stds - 0.1)) <= 0.005

    def test_negative_sigma_rejected(self):
        with pytest.raises(ConfigError):
            MeasurementModel(Identity((2,)), -0.1)
