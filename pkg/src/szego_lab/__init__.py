"""Numerical lab for quasi-periodic CMV matrices and Szego cocycles."""

__version__ = "0.1.0"
