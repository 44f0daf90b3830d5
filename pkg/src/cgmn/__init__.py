"""Contrastive graph matching for self-supervised graph similarity."""

__version__ = "0.1.0"
