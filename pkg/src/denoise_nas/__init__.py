"""Entropy-regularized differentiable NAS for hardware-aware U-Net denoisers."""

__version__ = "0.1.0"
