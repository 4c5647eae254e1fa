"""Confidence-guided training for continuous classification of time series."""

__version__ = "0.1.0"
