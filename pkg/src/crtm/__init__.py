"""Contextual relational topic model for anchor prediction in document networks."""

__version__ = "0.1.0"
