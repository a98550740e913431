"""Geometric optics for waves grazing convex obstacles."""

__version__ = "0.1.0"
