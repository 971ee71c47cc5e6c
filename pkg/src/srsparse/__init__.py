"""Sparse-representation Bayesian estimators and stochastic-resonance solvers."""

__version__ = "0.1.0"
