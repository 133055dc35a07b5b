"""Discriminative power of recommender metrics over hyper-parameter grids."""

__version__ = "0.1.0"
