"""Smooth, cyclically monotone interpolation of discrete optimal transport maps."""

__version__ = "0.1.0"
