"""Simulation checks of posterior consistency for Gaussian-process priors in regression models."""
__version__ = "0.1.0"
