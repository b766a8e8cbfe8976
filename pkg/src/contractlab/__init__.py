"""contractlab -- numerical checks of Wasserstein contraction under reflection coupling."""

__version__ = "0.1.0"

from .config import ExperimentConfig, load_config
from .coupling_sim import (
    CouplingSpec,
    evolve_ensemble,
    simulate_coupled_pair,
    simulate_girsanov_pair,
    simulate_radial_dominant,
)
from .errors import (
    ConfigError,
    ContractLabError,
    DomainError,
    HypothesisError,
    QuadratureError,
    SimulationError,
    UnsupportedModelError,
)
from .models import (
    MODEL_FAMILIES,
    CurvatureProfile,
    DriftModel,
    build_model,
    exact_index,
    index_bound,
    validate_profile,
)
from .psi_core import build_psi, contraction_constants, cor1_constants, lemma1_residuals
from .runner import RunResult, run
from .verify import (
    check_contraction,
    check_gradient,
    check_harnack,
    check_lyapunov_moment,
    estimate_esm,
)
from .wasserstein import (
    EmpiricalMeasure,
    bootstrap_ci,
    wasserstein_1d_quantile,
    wasserstein_exact,
    wasserstein_tilde,
)

__all__ = [
    "ConfigError",
    "ContractLabError",
    "CouplingSpec",
    "CurvatureProfile",
    "DomainError",
    "DriftModel",
    "EmpiricalMeasure",
    "ExperimentConfig",
    "HypothesisError",
    "MODEL_FAMILIES",
    "QuadratureError",
    "RunResult",
    "SimulationError",
    "UnsupportedModelError",
    "__version__",
    "bootstrap_ci",
    "build_model",
    "build_psi",
    "check_contraction",
    "check_gradient",
    "check_harnack",
    "check_lyapunov_moment",
    "contraction_constants",
    "cor1_constants",
    "estimate_esm",
    "evolve_ensemble",
    "exact_index",
    "index_bound",
    "lemma1_residuals",
    "load_config",
    "run",
    "simulate_coupled_pair",
    "simulate_girsanov_pair",
    "simulate_radial_dominant",
    "validate_profile",
    "wasserstein_1d_quantile",
    "wasserstein_exact",
    "wasserstein_tilde",
]
