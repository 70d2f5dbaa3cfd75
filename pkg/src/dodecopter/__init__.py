"""Modelling, allocation, structural analysis and configuration search for dodecahedral modular multirotors."""

__version__ = "0.1.0"
