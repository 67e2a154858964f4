"""Affine Toda systems on a periodic grid.

Root-system combinatorics, diagram foldings, a Newton-Krylov solver for the
discrete Toda systems, and verifiers for the maximum principles they obey.
"""

__version__ = "0.1.0"
