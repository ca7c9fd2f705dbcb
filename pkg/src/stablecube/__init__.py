"""Stable cubulations of hierarchical hulls at desk scale."""

__version__ = "0.1.0"
