"""Generative client-selection laboratory for simulated federated learning."""

__version__ = "0.1.0"
