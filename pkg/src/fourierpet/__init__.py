"""Unrolled amplitude/phase-aware reconstruction for low-count PET, with the
simulation, projection, classical baselines and spectral diagnostics it
depends on."""

from .classical import MLEMReconstructor, OSEMReconstructor, mlem, osem
from .projector import SystemMatrix, build_parallel_projector

__version__ = "0.1.0"

__all__ = [
    "SystemMatrix",
    "build_parallel_projector",
    "mlem",
    "osem",
    "MLEMReconstructor",
    "OSEMReconstructor",
    "__version__",
]
