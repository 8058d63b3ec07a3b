"""Schrodinger-Newton signatures in a torsion-pendulum optomechanical experiment."""

__version__ = "0.1.0"
