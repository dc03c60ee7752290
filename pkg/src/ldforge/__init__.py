"""Numerical toolkit for LD and RLD solutions and doubling constructions."""
__version__ = "0.1.0"
