"""Blended General Linear Methods built from Generalized BDF."""
__version__ = "0.1.0"
