"""Facial action unit occurrence detection on precomputed CNN features."""

__version__ = "0.1.0"
