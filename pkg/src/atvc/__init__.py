"""Accountable text-based visual re-creation, desk scale."""

__version__ = "0.1.0"
