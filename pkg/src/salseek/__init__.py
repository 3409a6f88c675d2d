"""Salient-region detection by entropy ascent from sparse seeds."""

__version__ = "0.1.0"
