"""Method-of-moments recovery of two-layer polynomial generators."""

__version__ = "0.1.0"
