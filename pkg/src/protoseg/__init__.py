"""Anchor-free instance segmentation building blocks."""

__version__ = "0.1.0"
