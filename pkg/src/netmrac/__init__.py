"""Distributed model reference adaptive control of networked LTI agents."""

__version__ = "0.1.0"
