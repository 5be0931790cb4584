"""Neural architecture search in a learned embedding space."""

__version__ = "0.1.0"
