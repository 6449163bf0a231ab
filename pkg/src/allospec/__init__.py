"""Spectral two-cluster classification under the allometric-extension model."""

__version__ = "0.1.0"
