"""Kinematics-driven robot tool segmentation by analysis-by-synthesis.

Noisy joint measurements are corrected over a video sequence by gradient
descent through a differentiable capsule-silhouette renderer, with an online
kinematics correction network, base-pose refinement, and spatio-temporal
regularization.
"""
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
