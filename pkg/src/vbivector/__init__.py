"""Variational Bayes factor analysis i-vector extractor."""
__version__ = "0.1.0"
