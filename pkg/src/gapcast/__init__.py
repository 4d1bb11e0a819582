"""Counterfactual estimation on unit x period panels."""

__version__ = "0.1.0"
