"""Branching random walks in the boundary case: simulation and statistical checks."""

__version__ = "0.1.0"
