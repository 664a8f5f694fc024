"""Pulse-level simulation of two-atom Rydberg blockade CNOT gates."""

__version__ = "0.1.0"
