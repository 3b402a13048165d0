"""Demand prediction and partially identified welfare analysis for binary choice with social spillovers."""

__version__ = "0.1.0"
