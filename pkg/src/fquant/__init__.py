"""Functional quantization of Brownian motion and its use for path-dependent pricing."""

__version__ = "0.1.0"
