"""Actuated-factor experiments on semi-actuated coordinated arterials."""

from .calibration import check_calibration, geh
from .design import default_space, generate_design
from .harness import ExperimentConfig, compute_drp, run_experiment
from .network import expand_volumes, reference_network, reference_volumes
from .rsm import fit_rsm, optimal_actf
from .sim import DemandSpec, run_simulation
from .timing import apply_actf, optimize_base_plan

__version__ = "0.1.0"

__all__ = [
    "DemandSpec",
    "ExperimentConfig",
    "apply_actf",
    "check_calibration",
    "compute_drp",
    "default_space",
    "expand_volumes",
    "fit_rsm",
    "generate_design",
    "geh",
    "optimal_actf",
    "optimize_base_plan",
    "reference_network",
    "reference_volumes",
    "run_experiment",
    "run_simulation",
]
