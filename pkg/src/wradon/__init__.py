"""Weighted Radon transforms over planes in R^3 and their inversion by successive approximations."""

from . import grids, harmonics, kernels, operators, radon, weights

__version__ = "0.1.0"

__all__ = ["grids", "harmonics", "kernels", "operators", "radon", "weights", "__version__"]
