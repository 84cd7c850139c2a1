"""Federated-learning simulator for short-term residential load forecasting."""

__version__ = "0.1.0"
