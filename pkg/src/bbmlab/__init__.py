"""Simulation and verification lab for two-type reducible branching Brownian motion."""

__version__ = "0.1.0"
