"""Tabular deep-learning engine for SAE automation-level crash classification."""

__version__ = "0.1.0"
