"""Undercrowding analysis for automatic people counting (APC) data."""

__version__ = "0.1.0"
