"""Numerical laboratory for the density of states of random Dirac-type operators."""

__version__ = "0.1.0"
