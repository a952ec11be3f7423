"""Energy-based models of low-dimensional densities learned by diffusion
recovery likelihood: conditional EBMs over a Gaussian diffusion, progressive
conditional MCMC for generation, and chained importance sampling for
normalized density estimation, all checkable against analytic or quadrature
oracles at desk scale."""

from . import autodiff, config, datasets, energy, generation, metrics, partition, samplers, schedule, trainer
from .cli import cli_main

__version__ = "0.1.0"

__all__ = [
    "autodiff",
    "config",
    "datasets",
    "energy",
    "generation",
    "metrics",
    "partition",
    "samplers",
    "schedule",
    "trainer",
    "cli_main",
    "__version__",
]
