"""Investor-stock network analytics: holdings projection, topology and
herding diagnostics, crash-day change analysis and pairwise Granger tests."""

__version__ = "0.1.0"
