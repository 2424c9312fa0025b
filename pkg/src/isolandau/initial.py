"""Initial condition constructors.

All densities are sampled on cell centers; discontinuous profiles (the
uniform ball) are antialiased by 4^3 subcell sampling so that the surface
does not pollute spectral accuracy of the potential.  Constructors return
raw densities; the runner symmetrizes and floors them.
"""

import numpy as np

from .grid import ScalarField


def gaussian(grid, mass, sigma, center=(0.0, 0.0, 0.0)):
    X, Y, Z = grid.coords()
    r2 = (X - center[0]) ** 2 + (Y - center[1]) ** 2 + (Z - center[2]) ** 2
    vals = mass * np.exp(-r2 / (2.0 * sigma**2)) / (2.0 * np.pi * sigma**2) ** 1.5
    return ScalarField(grid, vals)


def uniform_ball(grid, mass, radius, subsamples=4):
    """Uniform density on |x| < radius, cell-averaged with subcell sampling."""
    X, Y, Z = grid.coords()
    h = grid.h
    off = ((np.arange(subsamples) + 0.5) / subsamples - 0.5) * h
    inside = np.zeros(grid.shape)
    for ox in off:
        for oy in off:
            for oz in off:
                inside += (X + ox) ** 2 + (Y + oy) ** 2 + (Z + oz) ** 2 <= radius**2
    density = mass / (4.0 / 3.0 * np.pi * radius**3)
    return ScalarField(grid, density * inside / subsamples**3)


def double_bump(grid, mass, sigma, offset):
    """Two equal Gaussians at +-offset along x (mass is the total)."""
    a = gaussian(grid, mass / 2.0, sigma, center=(offset, 0.0, 0.0))
    b = gaussian(grid, mass / 2.0, sigma, center=(-offset, 0.0, 0.0))
    return ScalarField(grid, a.values + b.values)
