"""Desk-scale simulator for spin-resolved single-atom imaging in tweezers.

Covers the full measurement chain: spin-9/2 field-quench dynamics, a
state-dependent dipole kick that maps spin onto position, photon-recoil
random walks during fluorescence imaging, EMCCD frame synthesis, and the
matched analysis pipeline (binarize, low-pass, localize, histogram fit,
Gaussian-mixture spin classification).
"""

__version__ = "0.1.0"

from ._kernels import BACKEND
from .config import ConfigError, config_hash, default_config, load_config
from .spin import (FieldSchedule, SpinVector, evolve, make_spin_operators,
                   measure_populations, quench_experiment, stretched_state)

__all__ = [
    "BACKEND",
    "ConfigError",
    "FieldSchedule",
    "SpinVector",
    "__version__",
    "config_hash",
    "default_config",
    "evolve",
    "load_config",
    "make_spin_operators",
    "measure_populations",
    "quench_experiment",
    "stretched_state",
]
