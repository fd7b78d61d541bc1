"""Entropy-sampled slice classification with stacking and majority-vote ensembles."""

__version__ = "0.1.0"
