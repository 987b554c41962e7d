"""Simulator and protocol library for a satellite-hosted certificate authority."""

__version__ = "0.1.0"
