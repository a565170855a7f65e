"""Multispecies occupancy models for camera-trap detection histories.

Fits species co-occurrence models by maximum likelihood and measures how
image-classifier errors propagate into occupancy estimates.
"""
from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
