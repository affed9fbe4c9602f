"""Competitive energy-driven hp-adaptive finite elements for convex variational problems."""
__version__ = "0.1.0"
