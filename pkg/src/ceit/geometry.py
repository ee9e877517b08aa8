"""Concentric-disk / source-ring / square-domain geometry and uniform grids.

The measurement layout is two concentric disks of radii ``B < D`` centered at
``(a, b)``: sources live on the inner circle of radius ``B``, the PDE is solved
on the outer disk, and the reconstruction square ``Omega`` of half-side ``c``
sits strictly inside the source circle. All constraints are validated eagerly;
downstream modules assume validated records.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ceit.errors import GeometryError

SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class DomainSpec:
    """Validated geometry record.

    a, b : center of both disks
    c    : half-side of the square Omega = (a-c, a+c) x (b-c, b+c)
    B    : radius of the source circle
    D    : radius of the outer disk (forward-problem domain)
    xi   : radius of the mollified point source
    """

    a: float
    b: float
    c: float
    B: float
    D: float
    xi: float

    @property
    def center(self) -> tuple[float, float]:
        return (self.a, self.b)

    @property
    def gamma0_x(self) -> float:
        """x-coordinate of the right (flux-measurement) side of Omega."""
        return self.a + self.c

    def source_point(self, theta: float | np.ndarray) -> np.ndarray:
        """Point(s) on the source circle at angle(s) theta, shape (..., 2)."""
        theta = np.asarray(theta, dtype=float)
        return np.stack(
            [self.a + self.B * np.cos(theta), self.b + self.B * np.sin(theta)], axis=-1
        )


@dataclass(frozen=True)
class GridSpec:
    """Uniform (n+2) x (n+2) node lattice covering the closed square.

    ``n`` counts interior points per side, so ``h = 2c/(n+1)`` and node (i, j)
    sits at ``(origin_x + i*h, origin_y + j*h)`` for i, j = 0..n+1. Index
    i = n+1 is the right side where one-sided flux stencils apply.
    """

    n: int
    h: float
    origin: tuple[float, float]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n + 2, self.n + 2)

    def xs(self) -> np.ndarray:
        return self.origin[0] + self.h * np.arange(self.n + 2)

    def ys(self) -> np.ndarray:
        return self.origin[1] + self.h * np.arange(self.n + 2)

    def node_coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Meshgrid (X, Y) of node coordinates, each of shape (n+2, n+2), x along axis 0."""
        return np.meshgrid(self.xs(), self.ys(), indexing="ij")

    def boundary_indices(self) -> tuple[np.ndarray, np.ndarray]:
        """Canonical per-side enumeration of boundary nodes, length 4n+8.

        Order: west column, east column, south row, north row; each side holds
        all n+2 of its nodes, so the four corners appear twice (once per
        adjacent side). Values sampled at duplicated entries always agree.
        """
        n = self.n
        full = np.arange(n + 2)
        ii = np.concatenate([np.zeros(n + 2, int), np.full(n + 2, n + 1), full, full])
        jj = np.concatenate([full, full, np.zeros(n + 2, int), np.full(n + 2, n + 1)])
        return ii, jj

    def gamma0_indices(self) -> tuple[np.ndarray, np.ndarray]:
        """East-column nodes (i = n+1, j = 0..n+1), length n+2."""
        jj = np.arange(self.n + 2)
        return np.full(self.n + 2, self.n + 1), jj

    @property
    def east_slice(self) -> slice:
        """Position of the east column inside the boundary enumeration."""
        return slice(self.n + 2, 2 * (self.n + 2))

    def interior_mask(self) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        m[1:-1, 1:-1] = True
        return m


@dataclass(frozen=True)
class SourceRing:
    """Uniformly spaced source angles theta_m = m * rho_theta, m = 1..count."""

    count: int
    rho_theta: float

    @property
    def angles(self) -> np.ndarray:
        return self.rho_theta * np.arange(1, self.count + 1)

    def nearest_index(self, theta: float) -> int:
        """Index (0-based) of the ring angle closest to theta."""
        return int(np.argmin(np.abs(self.angles - theta)))


def build_domain(a: float, b: float, c: float, B: float, D: float, xi: float) -> DomainSpec:
    """Validate and freeze the measurement geometry.

    Raises GeometryError naming the violated constraint.
    """
    if not (0.0 < B < D):
        raise GeometryError(f"source radius must satisfy 0 < B < D, got B={B}, D={D}")
    if c <= 0.0:
        raise GeometryError(f"square half-side must be positive, got c={c}")
    if not (c * SQRT2 < B):
        raise GeometryError(
            f"closed square not inside source disk: need c*sqrt(2) < B, got {c * SQRT2:.6g} >= {B}"
        )
    if not (c < a):
        raise GeometryError(f"square half-side must satisfy 0 < c < a, got c={c}, a={a}")
    if not (0.0 < xi < 1.0):
        raise GeometryError(f"mollifier radius must lie in (0, 1), got xi={xi}")
    if not (B - c * SQRT2 > xi):
        raise GeometryError(
            f"mollifier support meets the square: need B - c*sqrt(2) > xi, got {B - c * SQRT2:.6g} <= {xi}"
        )
    if not (xi < D - B):
        raise GeometryError(
            f"mollifier support leaves the outer disk: need xi < D - B, got {xi} >= {D - B:.6g}"
        )
    return DomainSpec(float(a), float(b), float(c), float(B), float(D), float(xi))


def build_grid(domain: DomainSpec, n: int) -> GridSpec:
    """Uniform grid with n interior points per side; requires n > 4 and h < 1."""
    if int(n) != n or n <= 4:
        raise GeometryError(f"interior point count must be an integer > 4, got n={n}")
    n = int(n)
    h = 2.0 * domain.c / (n + 1)
    if not (0.0 < h < 1.0):
        raise GeometryError(f"grid step must lie in (0, 1), got h={h}")
    return GridSpec(n=n, h=h, origin=(domain.a - domain.c, domain.b - domain.c))


def source_angles(M: int, rho: float) -> SourceRing:
    """Ring of M angles m*rho, m = 1..M; the ring must not wrap past 2*pi."""
    if int(M) != M or M < 3:
        raise GeometryError(f"need at least 3 source angles, got M={M}")
    if rho <= 0.0:
        raise GeometryError(f"angular step must be positive, got rho={rho}")
    if not (M * rho < 2.0 * math.pi):
        raise GeometryError(
            f"ring wraps past 2*pi: need M*rho < 2*pi, got {M * rho:.6g} >= {2 * math.pi:.6g}"
        )
    return SourceRing(count=int(M), rho_theta=float(rho))


def benchmark_domain() -> DomainSpec:
    """Default geometry: D=3, B=2, center (1.5, 1.5), c=0.5, xi=0.1."""
    return build_domain(a=1.5, b=1.5, c=0.5, B=2.0, D=3.0, xi=0.1)


def benchmark_ring() -> SourceRing:
    """Default ring: 199 sources at angular step pi/100."""
    return source_angles(199, math.pi / 100.0)
