"""Bilinear vs pointwise MLP experiments on a minimal numpy autodiff engine."""

__version__ = "0.1.0"
