"""Curvature flow of planar networks with irregular junctions."""

__version__ = "0.1.0"
