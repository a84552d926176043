"""Reinforcement-learning control of PV smart inverters with a fairness-aware reward."""

__version__ = "0.1.0"
