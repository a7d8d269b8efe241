"""Diffusion-model trajectory generation for 6-DoF powered descent."""

__version__ = "0.1.0"
