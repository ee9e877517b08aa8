"""Finite-difference stencils, rectangle quadrature and discrete Sobolev norms.

All stencils act on the (n+2) x (n+2) node lattice of a GridSpec with x along
axis 0. Derivative fields are populated on interior nodes (i, j = 1..n) and
zero on the boundary ring; the one-sided x-derivative on the east column is
the only boundary stencil.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ceit.geometry import GridSpec


@dataclass(eq=False)
class ScalarField:
    """Nodal values on a grid; shape (n+2, n+2), all finite."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"field shape {self.values.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite values")

    @classmethod
    def zeros(cls, grid: GridSpec) -> "ScalarField":
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def from_function(cls, grid: GridSpec, f) -> "ScalarField":
        x, y = grid.node_coords()
        return cls(grid, f(x, y))

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy())


@dataclass(eq=False)
class VectorField:
    """Pair of x/y component fields sharing one grid."""

    x: ScalarField
    y: ScalarField

    def __post_init__(self) -> None:
        if self.x.values.shape != self.y.values.shape:
            raise ValueError("vector components have mismatched shapes")


# Raw-array stencil kernels. Inputs are full (n+2, n+2) arrays; outputs are
# interior (n, n) arrays. Kept separate from the ScalarField wrappers so the
# optimizer hot path can stay allocation-light.


def d1x(v: np.ndarray, h: float) -> np.ndarray:
    return (v[2:, 1:-1] - v[:-2, 1:-1]) / (2.0 * h)


def d1y(v: np.ndarray, h: float) -> np.ndarray:
    return (v[1:-1, 2:] - v[1:-1, :-2]) / (2.0 * h)


def d2x(v: np.ndarray, h: float) -> np.ndarray:
    return (v[2:, 1:-1] - 2.0 * v[1:-1, 1:-1] + v[:-2, 1:-1]) / (h * h)


def d2y(v: np.ndarray, h: float) -> np.ndarray:
    return (v[1:-1, 2:] - 2.0 * v[1:-1, 1:-1] + v[1:-1, :-2]) / (h * h)


def dxy(v: np.ndarray, h: float) -> np.ndarray:
    return (v[2:, 2:] - v[2:, :-2] - v[:-2, 2:] + v[:-2, :-2]) / (4.0 * h * h)


def laplacian(v: np.ndarray, h: float) -> np.ndarray:
    return (
        v[2:, 1:-1] + v[:-2, 1:-1] + v[1:-1, 2:] + v[1:-1, :-2] - 4.0 * v[1:-1, 1:-1]
    ) / (h * h)


_STENCILS = {
    "d1x": d1x,
    "d1y": d1y,
    "d2x": d2x,
    "d2y": d2y,
    "dxy": dxy,
    "laplacian": laplacian,
}


def fd_apply(f: ScalarField, op: str) -> ScalarField:
    """Apply a named central stencil; result is interior-supported (zero ring)."""
    try:
        kernel = _STENCILS[op]
    except KeyError:
        raise ValueError(f"unknown stencil {op!r}; choose from {sorted(_STENCILS)}") from None
    out = np.zeros(f.grid.shape)
    out[1:-1, 1:-1] = kernel(f.values, f.grid.h)
    return ScalarField(f.grid, out)


def one_sided_dx_all(v: np.ndarray, h: float) -> np.ndarray:
    """Backward-biased x-derivative on the east column, one value per j = 0..n+1."""
    return (3.0 * v[-1, :] - 4.0 * v[-2, :] + v[-3, :]) / (2.0 * h)


def one_sided_dx(f: ScalarField, j: int) -> float:
    """One-sided d/dx at east-column node (n+1, j)."""
    v, h = f.values, f.grid.h
    if not (0 <= j <= f.grid.n + 1):
        raise IndexError(f"column index {j} outside 0..{f.grid.n + 1}")
    return float((3.0 * v[-1, j] - 4.0 * v[-2, j] + v[-3, j]) / (2.0 * h))


def rect_quad(f: ScalarField) -> float:
    """Rectangle-rule integral h^2 * sum over all nodes of the handed integrand."""
    return float(f.grid.h ** 2 * f.values.sum())


def l2h_sq(v: np.ndarray, h: float) -> float:
    return float(h * h * np.sum(v * v))


def h2h_sq(v: np.ndarray, h: float) -> float:
    """Squared discrete H^2 norm: all-node L2 part plus interior derivative sums."""
    s = l2h_sq(v, h)
    for g in (d1x(v, h), d1y(v, h), d2x(v, h), dxy(v, h), d2y(v, h)):
        s += h * h * float(np.sum(g * g))
    return s


def h1h_sq(v: np.ndarray, h: float) -> float:
    """Squared discrete H^1 norm: all-node L2 part plus first-derivative sums."""
    s = l2h_sq(v, h)
    for g in (d1x(v, h), d1y(v, h)):
        s += h * h * float(np.sum(g * g))
    return s


def norm_l2h(f: ScalarField) -> float:
    return float(np.sqrt(l2h_sq(f.values, f.grid.h)))


def norm_h2h(f: ScalarField) -> float:
    return float(np.sqrt(h2h_sq(f.values, f.grid.h)))


def gradient(f: ScalarField) -> VectorField:
    """Central-difference gradient, interior-supported components."""
    return VectorField(fd_apply(f, "d1x"), fd_apply(f, "d1y"))
