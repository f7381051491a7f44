"""Analytical NTKs, training-free adversarial examples, spectral features,
and empirical-kernel training dynamics."""

__version__ = "0.1.0"
