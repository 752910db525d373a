"""Bayesian home-advantage models for professional squash match margins."""

__version__ = "0.1.0"
