"""Polarization waveplates from tilted-axis waveguides: modelling, fitting and tomography."""

from .jones import (
    DensityMatrix,
    DomainError,
    PlateOperator,
    PolarizationState,
    fidelity,
    waveplate_matrix,
)
from .algebra import PlateSpec, canonicalize, synthesize
from .tomography import ExperimentConfig, mle_refine, run_full_experiment

__version__ = "0.1.0"

__all__ = [
    "DensityMatrix",
    "DomainError",
    "ExperimentConfig",
    "PlateOperator",
    "PlateSpec",
    "PolarizationState",
    "canonicalize",
    "fidelity",
    "mle_refine",
    "run_full_experiment",
    "synthesize",
    "waveplate_matrix",
]
