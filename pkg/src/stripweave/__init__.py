"""Minimum-strain planar embeddings of curved surface strips."""
__version__ = "0.1.0"
