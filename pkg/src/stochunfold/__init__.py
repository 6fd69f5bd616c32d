"""Stochastic unfolding and homogenization on discrete random environments."""

__version__ = "0.1.0"
