"""MAP reconstruction for linear inverse problems under flow-matching priors.

The package is organized bottom-up:

* ``tensor`` -- float64 substrate, seeded counter-based RNG, SPD solves, FTEN I/O
* ``schedule`` -- interpolation coefficients and signal-to-noise terms
* ``operators`` -- linear forward maps with exact adjoints, measurement model
* ``velocity`` -- analytic Gaussian and trainable MLP velocity fields
* ``likelihood`` -- trace estimation, trajectory log-likelihood, score conversion
* ``solvers`` -- ICTM, no-prior ablation, global MAP oracle, guidance baseline
* ``analysis`` -- local-objective decomposition gap, compliance bound, MAP oracle
* ``metrics`` -- PSNR / SSIM
* ``config`` / ``datasets`` / ``harness`` / ``cli`` -- experiment orchestration
"""

from .analysis import (
    ComplianceReport,
    LocalObjectiveWeights,
    compliance_measure,
    empirical_c1,
    gaussian_map_oracle,
    decomposition_gap,
)
from .config import ExperimentConfig, load_config, parse_config
from .datasets import synthesize_dataset
from .errors import (
    ConfigError,
    DivergedSolve,
    DivergedTrajectory,
    DomainError,
    FlowmapError,
    NotPositiveDefinite,
    ShapeError,
    TrainingDiverged,
)
from .harness import RunManifest, export_image, run_experiment
from .likelihood import (
    AuxiliaryPath,
    GaussianMarginal,
    TraceEstimator,
    local_data_loglik,
    score_from_velocity,
    trace_jacobian,
    trajectory_log_likelihood,
)
from .metrics import MetricReport, metric_report, psnr, ssim
from .operators import LinearOperator, MeasurementModel, make_operator, measure
from .schedule import InterpolationSchedule, SnrTerms, ot_schedule, snr_terms
from .solvers import (
    ReconstructionResult,
    SolverConfig,
    default_solver_config,
    euler_rollout,
    solve,
    solve_dps_ode,
    solve_global_map,
    solve_ictm,
    solve_ictm_no_prior,
)
from .tensor import Rng, SpdMatrix, cholesky_solve, gaussian_sample, load_tensor, save_tensor
from .velocity import (
    AnalyticGaussianVelocity,
    GaussianDataPrior,
    MlpVelocity,
    VelocityField,
    analytic_gaussian_velocity,
    grad_of_trace_probe,
    load_checkpoint,
    mlp_forward_with_tape,
    save_checkpoint,
    train_flow_matching,
)

__version__ = "0.1.0"
