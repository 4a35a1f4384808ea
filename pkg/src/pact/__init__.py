"""Embedding, indexing and search over typed enterprise artifacts."""

__version__ = "0.1.0"
