"""Compliance-aware system-optimal route recommendation."""

__version__ = "0.1.0"
