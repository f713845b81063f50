"""Simulation-based design of multi-arm trials over a continuous treatment variable."""

__version__ = "0.1.0"
