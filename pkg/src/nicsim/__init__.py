"""Discrete-event model of a modular host-network-interface stack."""

__version__ = "0.1.0"
