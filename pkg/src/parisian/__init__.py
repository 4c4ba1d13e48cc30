"""Finite-horizon Parisian ruin for Gaussian and alpha-stable risk processes:
path simulation, Monte Carlo estimators, closed-form asymptotics and
Pickands-type constants."""

__version__ = "0.1.0"
