"""Diffusion-model initialization of variational quantum circuit parameters."""

__version__ = "0.1.0"
