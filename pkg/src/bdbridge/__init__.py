"""Endpoint-conditioned Poisson birth-death bridges on integer lattices."""

__version__ = "0.1.0"
