"""Tradable credit scheme simulation on a single-reservoir trip-based MFD."""

__version__ = "0.1.0"
