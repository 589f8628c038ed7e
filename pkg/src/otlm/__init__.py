"""Ordered-attention transformer language model with unsupervised tree induction."""

__version__ = "0.1.0"
