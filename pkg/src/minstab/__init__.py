"""Numerical checks of a stability criterion for minimal graphs in higher codimension."""

__version__ = "0.1.0"
