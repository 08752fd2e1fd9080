"""Numerical laboratory for a dynamically rescaled, swirl-free axisymmetric
Boussinesq system with temperature diffusion.

The package evolves a vorticity perturbation together with the two
temperature-gradient profiles under a dynamic-rescaling change of variables,
solves the associated self-similar stream-function (Biot-Savart) problem, and
ships a property-test battery for the weighted-norm inequalities the scheme
relies on (Hardy lemmas, Laplacian coercivity, embedding sanity, energy
ledgers).
"""

__version__ = "0.1.0"

from .grid import Params, Grid, ScalarField, build_grid

__all__ = ["Params", "Grid", "ScalarField", "build_grid", "__version__"]
