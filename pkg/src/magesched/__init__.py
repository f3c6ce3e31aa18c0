"""Interference-aware scheduling on heterogeneous cores and servers via staged latent-factor inference."""

__version__ = "0.1.0"
