"""Leverage-score sampling for online estimation of stationary VARX models."""
__version__ = "0.1.0"
