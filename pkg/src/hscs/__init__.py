"""Hyperspherical Coulomb spheroidal representation of the Coulomb three-body problem."""

__version__ = "0.1.0"
