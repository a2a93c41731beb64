"""Skater's-dilemma race simulation and mass-start race analytics."""

__version__ = "0.1.0"
