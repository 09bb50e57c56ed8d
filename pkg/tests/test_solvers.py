import numpy as np
import pytest

from flowmap.analysis import gaussian_map_oracle
from flowmap.errors import ConfigError
from flowmap.operators import Identity, MeasurementModel, measure
from flowmap.solvers import (
    DEFAULT_GUIDANCE_WEIGHT,
    DEFAULT_INNER_ITERS,
    DEFAULT_N_STEPS,
    DEFAULT_STEP_SIZE,
    SolverConfig,
    default_solver_config,
    euler_rollout,
    global_map_objective,
    solve,
    solve_dps_ode,
    solve_global_map,
    solve_ictm,
    solve_ictm_no_prior,
)
from flowmap.tensor import Rng, SpdMatrix, random_spd
from flowmap.velocity import AnalyticGaussianVelocity, GaussianDataPrior, MlpVelocity


def toy_problem(toy16, schedule, seed):
    prior, field = toy16
    operator = Identity((16,))
    model = MeasurementModel(operator, 0.1)
    r = Rng(seed)
    x_true = field.flow_map(r.fork("data").normal(16), 1.0)
    y = measure(model, x_true, r.fork("meas"))
    return prior, field, operator, y, r.fork("solve")


def base_cfg(**kw):
    defaults = dict(
        n_steps=100, inner_iters=10, step_size=1e-2, guidance_weight=50.0,
        sigma_y=0.1, seed=0,
    )
    defaults.update(kw)
    return SolverConfig(**defaults)


class TestDegenerateLimits:
    @pytest.mark.parametrize("variant", ["ictm", "ictm_no_prior", "dps_ode", "global_map"])
    def test_zero_step_size_is_unconditional_rollout(self, toy16, schedule, variant):
        prior, field, operator, y, rng = toy_problem(toy16, schedule, 900)
        cfg = base_cfg(step_size=0.0, variant=variant, n_steps=50, inner_iters=3, outer_iters=5)
        result = solve(cfg, field, schedule, operator, y, rng)
        rollout = euler_rollout(field, result.x0, 50)
        assert np.array_equal(result.x1, rollout)
        assert len(result.per_step) == 50

    def test_vanishing_guidance_approaches_rollout(self, toy16, schedule):
        """Data-term-only inner loop degenerates to the plain rollout as the
        guidance weight vanishes. Adam is scale invariant, so the approach
        only bites once gradients reach its epsilon regime; at weight zero the
        update is exactly a no-op."""
        prior, field, operator, y, _ = toy_problem(toy16, schedule, 901)
        dists = []
        for lam in (1e-2, 1e-8, 1e-12):
            cfg = base_cfg(guidance_weight=lam, n_steps=50, inner_iters=3)
            result = solve_ictm_no_prior(cfg, field, schedule, operator, y, Rng(7))
            rollout = euler_rollout(field, result.x0, 50)
            dists.append(float(np.linalg.norm(result.x1 - rollout)))
        assert dists[0] > dists[1] > dists[2]
        assert dists[2] <= 1e-2
        cfg = base_cfg(guidance_weight=0.0, n_steps=50, inner_iters=3)
        result = solve_ictm_no_prior(cfg, field, schedule, operator, y, Rng(7))
        assert np.array_equal(result.x1, euler_rollout(field, result.x0, 50))

    def test_dps_self_consistent_measurement(self, toy16, schedule):
        """With y equal to the rollout endpoint of the same x0 and no noise,
        guidance stays at discretization level."""
        prior, field = toy16
        operator = Identity((16,))
        rng = Rng(902)
        x0 = rng.fork("init-noise").normal(16)
        n = 100
        y = euler_rollout(field, x0, n)
        cfg = base_cfg(variant="dps_ode", step_size=0.05, n_steps=n, sigma_y=0.0)
        result = solve_dps_ode(cfg, field, schedule, operator, y, Rng(902))
        assert np.array_equal(result.x0, x0)
        assert np.linalg.norm(result.x1 - y) <= 5.0 / n


class TestIctmToy:
    def test_converges_to_closed_form_map(self, toy16, schedule):
        prior, field, operator, y, rng = toy_problem(toy16, schedule, 903)
        x_star = gaussian_map_oracle(prior, y, 0.1)
        cfg = base_cfg()
        result = solve_ictm(cfg, field, schedule, operator, y, rng)
        assert float(np.mean((result.x1 - x_star) ** 2)) <= 1e-3

    def test_exact_weight_mode(self, toy16, schedule):
        prior, field, operator, y, rng = toy_problem(toy16, schedule, 904)
        x_star = gaussian_map_oracle(prior, y, 0.1)
        cfg = base_cfg(exact_weight=True, guidance_weight=1.0)
        result = solve_ictm(cfg, field, schedule, operator, y, rng)
        assert float(np.mean((result.x1 - x_star) ** 2)) <= 1e-3

    def test_determinism(self, toy16, schedule):
        prior, field, operator, y, _ = toy_problem(toy16, schedule, 905)
        cfg = base_cfg(n_steps=30, inner_iters=5)
        r1 = solve_ictm(cfg, field, schedule, operator, y, Rng(55))
        r2 = solve_ictm(cfg, field, schedule, operator, y, Rng(55))
        assert np.array_equal(r1.x1, r2.x1)
        assert r1.per_step == r2.per_step

    def test_per_step_diagnostics(self, toy16, schedule):
        prior, field, operator, y, rng = toy_problem(toy16, schedule, 906)
        cfg = base_cfg(n_steps=25, inner_iters=2)
        result = solve_ictm(cfg, field, schedule, operator, y, rng)
        assert len(result.per_step) == 25
        assert all(np.isfinite(d.residual) for d in result.per_step)
        assert all(d.trace is not None for d in result.per_step)

    def test_residual_monotone_in_guidance(self, toy16, schedule):
        prior, field = toy16
        operator = Identity((16,))
        model = MeasurementModel(operator, 0.1)
        lam_grid = (10.0, 50.0, 200.0)
        mean_resid = []
        for lam in lam_grid:
            resids = []
            for j in range(20):
                r = Rng(300 + j)
                x_true = field.flow_map(r.fork("data").normal(16), 1.0)
                y = measure(model, x_true, r.fork("meas"))
                cfg = base_cfg(guidance_weight=lam)
                result = solve_ictm(cfg, field, schedule, operator, y, Rng(55).fork("solve"))
                resids.append(np.linalg.norm(operator.apply(result.x1) - y))
            mean_resid.append(float(np.mean(resids)))
        assert mean_resid[0] >= mean_resid[1] >= mean_resid[2]


class TestNoPriorAblation:
    def test_no_trace_estimates(self, toy16, schedule):
        prior, field, operator, y, rng = toy_problem(toy16, schedule, 907)
        cfg = base_cfg(n_steps=20, inner_iters=2)
        result = solve_ictm_no_prior(cfg, field, schedule, operator, y, rng)
        assert all(d.trace is None for d in result.per_step)

    def test_worse_than_full_ictm_on_average(self, toy16, schedule):
        prior, field = toy16
        operator = Identity((16,))
        model = MeasurementModel(operator, 0.1)
        full, ablated = [], []
        for j in range(50):
            r = Rng(400 + j)
            x_true = field.flow_map(r.fork("data").normal(16), 1.0)
            y = measure(model, x_true, r.fork("meas"))
            x_star = gaussian_map_oracle(prior, y, 0.1)
            cfg = base_cfg(n_steps=50, inner_iters=5)
            rf = solve_ictm(cfg, field, schedule, operator, y, r.fork("solve"))
            ra = solve_ictm_no_prior(cfg, field, schedule, operator, y, r.fork("solve"))
            full.append(np.mean((rf.x1 - x_star) ** 2))
            ablated.append(np.mean((ra.x1 - x_star) ** 2))
        assert np.mean(full) < np.mean(ablated)


class TestDpsOde:
    def test_three_way_ordering(self, toy16, schedule):
        """ICTM beats the guidance baseline which beats unconditional sampling."""
        prior, field = toy16
        operator = Identity((16,))
        model = MeasurementModel(operator, 0.1)
        mse = {"uncond": [], "dps": [], "ictm": []}
        for j in range(10):
            r = Rng(500 + j)
            x_true = field.flow_map(r.fork("data").normal(16), 1.0)
            y = measure(model, x_true, r.fork("meas"))
            x_star = gaussian_map_oracle(prior, y, 0.1)
            ri = solve_ictm(base_cfg(), field, schedule, operator, y, r.fork("solve"))
            rd = solve_dps_ode(
                base_cfg(variant="dps_ode", step_size=2.0), field, schedule, operator, y,
                r.fork("solve"),
            )
            uncond = euler_rollout(field, rd.x0, 100)
            mse["ictm"].append(np.mean((ri.x1 - x_star) ** 2))
            mse["dps"].append(np.mean((rd.x1 - x_star) ** 2))
            mse["uncond"].append(np.mean((uncond - x_star) ** 2))
        assert np.mean(mse["ictm"]) < np.mean(mse["dps"]) < np.mean(mse["uncond"])

    def test_requires_ot_schedule(self, toy16, schedule):
        from flowmap.schedule import InterpolationSchedule

        prior, field = toy16
        weird = InterpolationSchedule("weird", schedule.alpha, schedule.beta,
                                      schedule.alpha_dot, schedule.beta_dot)
        with pytest.raises(ConfigError):
            solve_dps_ode(base_cfg(variant="dps_ode"), field, weird, Identity((16,)),
                          np.zeros(16), Rng(0))


class TestGlobalMap:
    def test_unrolled_gradient_matches_finite_differences(self, schedule):
        d = 4
        mu = Rng(1).normal(d) * 0.5
        sigma = SpdMatrix(random_spd(d, Rng(2), 0.3, 1.5))
        analytic = AnalyticGaussianVelocity(GaussianDataPrior(mu, sigma), schedule)
        mlp = MlpVelocity(d, hidden=(16, 16)).init_weights(Rng(3), zero_final=False)
        operator = Identity((d,))
        y = Rng(4).normal(d)
        x0 = Rng(5).normal(d)
        h = 1e-6
        for field in (analytic, mlp):
            _, grad = global_map_objective(field, schedule, operator, y, 0.1, x0, 10)
            fd = np.zeros(d)
            for i in range(d):
                e = np.zeros(d)
                e[i] = h
                up, _ = global_map_objective(field, schedule, operator, y, 0.1, x0 + e, 10)
                down, _ = global_map_objective(field, schedule, operator, y, 0.1, x0 - e, 10)
                fd[i] = (up - down) / (2 * h)
            assert np.max(np.abs(grad - fd)) <= 1e-5 * max(1.0, np.max(np.abs(fd)))

    def test_converges_to_closed_form_map(self, toy16, schedule):
        prior, field, operator, y, rng = toy_problem(toy16, schedule, 908)
        x_star = gaussian_map_oracle(prior, y, 0.1)
        cfg = base_cfg(variant="global_map", n_steps=200, step_size=2e-2, outer_iters=500)
        result = solve_global_map(cfg, field, schedule, operator, y, rng)
        assert float(np.mean((result.x1 - x_star) ** 2)) <= 1e-4
        assert result.loss_curve is not None and result.loss_curve[-1] < result.loss_curve[0]

    def test_prior_only_limit(self, toy16, schedule):
        """As the data weight vanishes the optimum is the rollout from zero
        (state-independent trace makes the prior term 0.5 ||x0||^2 alone)."""
        prior, field = toy16
        operator = Identity((16,))
        y = Rng(909).normal(16)
        cfg = base_cfg(variant="global_map", sigma_y=1e6, n_steps=50, step_size=5e-2,
                       outer_iters=600)
        result = solve_global_map(cfg, field, schedule, operator, y, Rng(910))
        assert np.linalg.norm(result.x0) <= 1e-3 * np.sqrt(16)
        assert np.max(np.abs(result.x1 - euler_rollout(field, result.x0, 50))) <= 1e-12

    def test_dimension_cap(self, schedule):
        field = MlpVelocity(65, hidden=(8, 8))
        with pytest.raises(ConfigError):
            solve_global_map(
                base_cfg(variant="global_map"), field, schedule, Identity((65,)),
                np.zeros(65), Rng(0),
            )


class TestDefaults:
    def test_recommended_hyperparameters(self):
        assert DEFAULT_STEP_SIZE == 1e-2
        assert DEFAULT_N_STEPS == 100
        assert DEFAULT_GUIDANCE_WEIGHT["inpainting"] == 1e4
        assert DEFAULT_GUIDANCE_WEIGHT["super_resolution"] == 1e4
        assert DEFAULT_GUIDANCE_WEIGHT["deblurring"] == 1e3
        assert DEFAULT_GUIDANCE_WEIGHT["compressed_sensing"] == 1e3
        assert DEFAULT_INNER_ITERS["compressed_sensing"] == 10

    def test_default_config_builder(self):
        cfg = default_solver_config("compressed_sensing", sigma_y=0.01, seed=5)
        assert cfg.inner_iters == 10 and cfg.guidance_weight == 1e3
        cfg = default_solver_config("inpainting", sigma_y=0.01, n_steps=20)
        assert cfg.n_steps == 20 and cfg.guidance_weight == 1e4
        with pytest.raises(ConfigError):
            default_solver_config("teleportation", sigma_y=0.1)

    def test_path_deviation_reported(self, toy16, schedule):
        prior, field, operator, y, rng = toy_problem(toy16, schedule, 911)
        cfg = base_cfg(n_steps=20, inner_iters=2)
        result = solve_ictm(cfg, field, schedule, operator, y, rng)
        assert result.path_deviation is not None
        assert np.isfinite(result.path_deviation) and result.path_deviation >= 0.0


class TestConfigValidation:
    def test_variant_checked(self):
        with pytest.raises(ConfigError):
            SolverConfig(n_steps=10, inner_iters=1, step_size=0.1, guidance_weight=1.0,
                         sigma_y=0.1, seed=0, variant="nonsense")

    def test_positive_counts(self):
        with pytest.raises(ConfigError):
            SolverConfig(n_steps=0, inner_iters=1, step_size=0.1, guidance_weight=1.0,
                         sigma_y=0.1, seed=0)
