"""Continuous speech separation for ad hoc microphone arrays."""

__version__ = "0.1.0"
