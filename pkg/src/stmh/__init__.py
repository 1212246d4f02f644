"""Single-trunk multi-head neural quantum state ensembles for degenerate ground spaces."""

from .model import HamiltonianSpec, Problem, build_sector_basis, exact_diagonalize
from .nqs import Ensemble, Mode, init_ensemble
from .sampler import SamplerConfig, SamplingMode
from .trainer import TrainConfig, train

__all__ = [
    "Ensemble",
    "HamiltonianSpec",
    "Mode",
    "Problem",
    "SamplerConfig",
    "SamplingMode",
    "TrainConfig",
    "build_sector_basis",
    "exact_diagonalize",
    "init_ensemble",
    "train",
]
__version__ = "0.1.0"
