"""Deformba: selective-scan mixing with an adaptive read over materialized states."""

__version__ = "0.1.0"
