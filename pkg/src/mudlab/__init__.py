"""Multiuser detection for randomly spread CDMA.

Modules: ``model`` (channel), ``oracle`` (exhaustive posterior),
``detectors`` (PDA family), ``siso`` (extrinsic LLR blocks), ``coding``
((5,7) code and turbo decoding), ``analysis`` (large-system prediction)
and ``harness`` (Monte Carlo experiments).
"""

from ._jit import HAVE_NUMBA, USE_NUMBA
from .detectors import DetectorConfig, Init, Kind, run_detector
from .model import SystemConfig, SystemInstance, generate_instance, noise_variance
from .oracle import exact_mpm

__version__ = "0.1.0"

__all__ = [
    "HAVE_NUMBA",
    "USE_NUMBA",
    "DetectorConfig",
    "Init",
    "Kind",
    "run_detector",
    "SystemConfig",
    "SystemInstance",
    "generate_instance",
    "noise_variance",
    "exact_mpm",
]
