"""Retrieval-augmented fact-checking of image-text claims."""

__version__ = "0.1.0"
