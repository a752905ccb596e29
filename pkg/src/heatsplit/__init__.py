"""Unsupervised disaggregation of electrical heating from daily smart-meter data."""

__version__ = "0.1.0"
