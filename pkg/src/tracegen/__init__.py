"""Trace-typed specifications to executable test generators."""

__version__ = "0.1.0"
