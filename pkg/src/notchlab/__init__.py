"""Predicting a loan manager's final risk rating from a scorecard and loan attributes."""

__version__ = "0.1.0"
