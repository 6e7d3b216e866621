"""Posterior-sampling outlier mining for OOD detection, at desk scale."""

__version__ = "0.1.0"
