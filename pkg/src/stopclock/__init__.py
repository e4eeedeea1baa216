"""Matched-pair estimates of the effect of basketball timeouts on scoring momentum."""

__version__ = "0.1.0"
