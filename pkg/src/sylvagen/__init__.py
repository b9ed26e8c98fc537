"""Synthetic forest plots and labeled multi-platform laser scanning point clouds."""

__version__ = "0.1.0"
