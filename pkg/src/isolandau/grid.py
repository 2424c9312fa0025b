"""Uniform cubic grids, scalar/vector fields, and the discrete calculus they share.

The grid is a cube [-L, L]^3 sampled at an odd number n of nodes per axis so
that the origin is a node and the node set is symmetric under x -> -x.  All
spatial derivatives in the package go through `gradient` and `divergence`
below; `divergence` defaults to a conservative flux form whose row sums
telescope, so integrals of divergences vanish identically under no-flux
boundary handling.
"""

from dataclasses import dataclass

import numpy as np

from .errors import GridMismatchError


@dataclass(frozen=True)
class Grid3:
    """Uniform tensor grid on a centered cube.

    Parameters
    ----------
    n : int
        Nodes per axis, odd so the origin is a node.
    h : float
        Node spacing.  The half-extent is L = h (n - 1) / 2.
    """

    n: int
    h: float

    def __post_init__(self):
        if self.n < 3 or self.n % 2 == 0:
            raise ValueError(f"n must be odd and >= 3, got {self.n}")
        if not self.h > 0:
            raise ValueError(f"h must be positive, got {self.h}")

    @property
    def half_extent(self):
        return self.h * (self.n - 1) / 2.0

    @property
    def cell_volume(self):
        return self.h**3

    @property
    def shape(self):
        return (self.n, self.n, self.n)

    def axis(self):
        """1-d node coordinates, symmetric about 0."""
        m = (self.n - 1) // 2
        return self.h * np.arange(-m, m + 1, dtype=float)

    def coords(self):
        """Meshgrid (X, Y, Z) with 'ij' indexing, each of shape (n, n, n)."""
        ax = self.axis()
        return np.meshgrid(ax, ax, ax, indexing="ij")

    def radius(self):
        """|x| at every node."""
        x, y, z = self.coords()
        return np.sqrt(x * x + y * y + z * z)

    def compatible(self, other):
        return self.n == other.n and np.isclose(self.h, other.h, rtol=1e-14)


def _check_same_grid(a, b):
    if not a.grid.compatible(b.grid):
        raise GridMismatchError(
            f"grids differ: n={a.grid.n}, h={a.grid.h} vs n={b.grid.n}, h={b.grid.h}"
        )


@dataclass
class ScalarField:
    grid: Grid3
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(
                f"values shape {self.values.shape} does not match grid {self.grid.shape}"
            )

    def copy(self):
        return ScalarField(self.grid, self.values.copy())


@dataclass
class VectorField:
    grid: Grid3
    components: np.ndarray  # shape (3, n, n, n)

    def __post_init__(self):
        self.components = np.asarray(self.components, dtype=float)
        if self.components.shape != (3,) + self.grid.shape:
            raise ValueError(
                f"components shape {self.components.shape} does not match grid"
            )

    def magnitude_squared(self):
        return np.sum(self.components**2, axis=0)


# ---------------------------------------------------------------------------
# weights


class Weight:
    """Named radial weight functions gamma used by the estimate audits."""

    KINDS = ("unit", "gamma", "gamma_inverse", "second_moment")

    def __init__(self, kind):
        if kind not in self.KINDS:
            raise ValueError(f"unknown weight kind {kind!r}")
        self.kind = kind

    def evaluate(self, grid):
        r = grid.radius()
        if self.kind == "unit":
            return np.ones(grid.shape)
        if self.kind == "gamma":
            return 1.0 / (1.0 + r)
        if self.kind == "gamma_inverse":
            return 1.0 + r
        return r * r  # second_moment


# ---------------------------------------------------------------------------
# discrete calculus

def _sl(ax, s):
    idx = [slice(None)] * 3
    idx[ax] = s
    return tuple(idx)


def gradient(f):
    """Second-order gradient: centered in the interior, one-sided at faces."""
    g = np.gradient(f.values, f.grid.h, edge_order=2)
    return VectorField(f.grid, np.stack(g))


def face_diff(v, ax, h):
    """Normal difference (v_{i+1} - v_i)/h on the n-1 faces along axis ax."""
    return (v[_sl(ax, slice(1, None))] - v[_sl(ax, slice(None, -1))]) / h


def face_avg(v, ax):
    """Arithmetic mean of node values on the faces along axis ax."""
    return 0.5 * (v[_sl(ax, slice(1, None))] + v[_sl(ax, slice(None, -1))])


def flux_divergence(flux, ax, h, out=None):
    """Accumulate (F_{i+1/2} - F_{i-1/2})/h for face fluxes along one axis.

    Boundary face fluxes are implicitly zero, so the node sum of the result
    telescopes to zero up to rounding.
    """
    if out is None:
        shape = list(flux.shape)
        shape[ax] += 1
        out = np.zeros(shape, dtype=flux.dtype)
    out[_sl(ax, slice(None, -1))] += flux / h
    out[_sl(ax, slice(1, None))] -= flux / h
    return out


def divergence(F, no_flux=True):
    """Discrete divergence of a vector field.

    With ``no_flux=True`` (the default used by the evolution scheme) each
    component is averaged to faces and differenced in conservative form with
    zero boundary fluxes, so ``weighted_integral(div F, 1) == 0`` to rounding.
    With ``no_flux=False`` the one-sided second-order formula is used at the
    boundary instead (plain np.gradient semantics).
    """
    h = F.grid.h
    out = np.zeros(F.grid.shape)
    for ax in range(3):
        c = F.components[ax]
        if no_flux:
            flux_divergence(face_avg(c, ax), ax, h, out)
        else:
            out += np.gradient(c, h, axis=ax, edge_order=2)
    return ScalarField(F.grid, out)


def weighted_integral(f, weight=None):
    """h^3-weighted node sum of f (times an optional Weight or array)."""
    v = f.values
    if weight is not None:
        w = weight.evaluate(f.grid) if isinstance(weight, Weight) else weight
        v = v * w
    return float(np.sum(v)) * f.grid.cell_volume


def symmetrize_even(f):
    """Even part of a field under x -> -x.

    The result is bitwise symmetric: both orientations of each node pair see
    the same two summands, and IEEE addition is commutative.
    """
    v = f.values
    return ScalarField(f.grid, 0.5 * (v + v[::-1, ::-1, ::-1]))


def parity_defect(f):
    """max |f(x) - f(-x)| over all nodes."""
    v = f.values
    return float(np.max(np.abs(v - v[::-1, ::-1, ::-1])))
