"""Audit how responsive package maintainers are to bug reports filed on GitHub."""

__version__ = "0.1.0"
