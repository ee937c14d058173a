"""Temporal point process laboratory: ground-truth models, continuous-time
RNN intensities, constructive approximations and complexity bounds."""

__version__ = "0.1.0"
