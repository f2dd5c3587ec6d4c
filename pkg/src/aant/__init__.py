"""Dual-branch traffic accident anticipation toolkit."""

__version__ = "0.1.0"
