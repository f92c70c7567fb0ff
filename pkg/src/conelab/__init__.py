"""Numerical evaluation of entropy functionals on links, cones, smoothings and Ricci flows."""

from .numcore import ConelabError, RadialGrid, ScalarField, SturmLiouvilleProblem

__all__ = ["ConelabError", "RadialGrid", "ScalarField", "SturmLiouvilleProblem"]
__version__ = "0.1.0"
