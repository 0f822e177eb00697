"""Numerical laboratory for isotropic steady states of the spherically
symmetric Einstein-Vlasov system and their linear stability."""

__version__ = "0.1.0"
