"""Sequential sampling for pushforward pdfs of expensive maps, with emphasis on tails."""

from .gp import Dataset, GpPosterior, KernelHyperparams, fit, predict
from .inputs import EmpiricalGrid, GaussianDiagonal, quadrature_grid
from .sampler import SamplerConfig, run

__all__ = [
    "Dataset", "GpPosterior", "KernelHyperparams", "fit", "predict",
    "EmpiricalGrid", "GaussianDiagonal", "quadrature_grid",
    "SamplerConfig", "run",
]
__version__ = "0.1.0"
