"""Simulation of distribution-dependent stochastic delay equations."""

__version__ = "0.1.0"
