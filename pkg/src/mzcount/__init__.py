"""Multivariate zero-inflated and zero-modified count regression."""

__version__ = "0.1.0"
