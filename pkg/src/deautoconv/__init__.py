"""Deautoconvolution on the unit cube: forward model, Tikhonov solver and experiments."""

__version__ = "0.1.0"
