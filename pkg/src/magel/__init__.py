"""Desk-scale 2D magnetoelasticity: energies, stray field, degree checks and
rate-independent incremental minimization."""

from ._backend import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
