"""Numerical laboratory for Ricci flow and local Ricci flow on rotationally symmetric metrics."""

__version__ = "0.1.0"
