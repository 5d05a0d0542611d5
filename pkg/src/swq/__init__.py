"""Numerical workbench for Seiberg-Witten equations of quaternionic
representations on flat 3-tori: representation data and moment maps,
spectral field calculus, the deformation-complex algebra, residuals and
linearizations, the horizontal/normal splitting layer, and the
finite-dimensional reduction solvers."""

__all__ = ["qrep", "field3", "dgla", "swop", "haydys", "kuranishi"]
__version__ = "0.1.0"
