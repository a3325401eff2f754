"""Noise-assisted transport in networks of coupled bosonic cavities."""

__version__ = "0.1.0"
