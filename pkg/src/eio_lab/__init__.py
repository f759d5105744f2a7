"""Outage-constrained capacity of channels known only through noisy estimates."""

__version__ = "0.1.0"
