"""Simulation and in-situ characterization of lossy linear-optical networks."""
from .lon_core import (
    LonError,
    check_subunitary,
    haar_random_unitary,
    loss_measure,
    normalize_phases,
    permanent,
    polar_decompose,
    unitary_dilation,
)
from .stats_analytic import SqueezeParam, conditional_covariance
from .estimator import AccumulatorSet, reconstruct_exact, reconstruct_first_order
from .metrics import fidelity_bound, sector_fidelity, tvd_bound
from .simulator import ExperimentConfig

__version__ = "0.1.0"

__all__ = [
    "LonError",
    "check_subunitary",
    "haar_random_unitary",
    "loss_measure",
    "normalize_phases",
    "permanent",
    "polar_decompose",
    "unitary_dilation",
    "SqueezeParam",
    "conditional_covariance",
    "AccumulatorSet",
    "reconstruct_exact",
    "reconstruct_first_order",
    "fidelity_bound",
    "sector_fidelity",
    "tvd_bound",
    "ExperimentConfig",
]
