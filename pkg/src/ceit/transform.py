"""Boundary-data transform: log traces, angular derivative, coupled boundary data.

The voltage traces are turned into ``s0 = ln(h0)`` on the full boundary and
``s1 = h1/h0`` on the east column (valid because the conductivity is one near
the square's boundary, so the transformed potential equals the measured one
there). A centered difference in the source angle then produces the Dirichlet
and flux data of the coupled (q, p) system at a chosen angle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ceit.errors import DataIntegrityError, GeometryError
from ceit.forward import BoundaryDataset
from ceit.geometry import GridSpec, SourceRing


@dataclass(eq=False)
class LogTraces:
    """Per-angle transformed traces; s0 on all boundary nodes, s1 on the east column."""

    grid: GridSpec
    ring: SourceRing
    angle_indices: np.ndarray
    s0: np.ndarray
    s1: np.ndarray

    def __post_init__(self) -> None:
        self.angle_indices = np.asarray(self.angle_indices, dtype=int)
        self.s0 = np.asarray(self.s0, dtype=float)
        self.s1 = np.asarray(self.s1, dtype=float)
        if not (np.all(np.isfinite(self.s0)) and np.all(np.isfinite(self.s1))):
            raise DataIntegrityError("log traces contain non-finite values")

    @property
    def full_ring(self) -> bool:
        return len(self.angle_indices) == self.ring.count

    def row(self, angle_index: int) -> int:
        pos = np.nonzero(self.angle_indices == angle_index)[0]
        if pos.size == 0:
            raise KeyError(f"angle index {angle_index} not present in traces")
        return int(pos[0])


@dataclass(eq=False)
class QPBoundary:
    """Dirichlet and flux data of the coupled system at one source angle."""

    grid: GridSpec
    theta0: float
    epsilon: float
    q_dirichlet: np.ndarray
    q_neumann: np.ndarray
    p_dirichlet: np.ndarray
    p_neumann: np.ndarray

    def __post_init__(self) -> None:
        n = self.grid.n
        for name, arr, length in (
            ("q_dirichlet", self.q_dirichlet, 4 * n + 8),
            ("q_neumann", self.q_neumann, n + 2),
            ("p_dirichlet", self.p_dirichlet, 4 * n + 8),
            ("p_neumann", self.p_neumann, n + 2),
        ):
            arr = np.asarray(arr, dtype=float)
            if arr.shape != (length,):
                raise ValueError(f"{name} must have length {length}, got {arr.shape}")
            setattr(self, name, arr)
        # corners appear once per adjacent side; the duplicated entries must agree
        m = n + 2
        corner_pairs = ((0, 2 * m), (m - 1, 3 * m), (m, 3 * m - 1), (2 * m - 1, 4 * m - 1))
        for name in ("q_dirichlet", "p_dirichlet"):
            arr = getattr(self, name)
            for u, v in corner_pairs:
                if arr[u] != arr[v]:
                    raise ValueError(
                        f"{name} disagrees at a duplicated corner entry ({u} vs {v})"
                    )


def log_traces(data: BoundaryDataset) -> LogTraces:
    """s0 = ln(h0) on the boundary; s1 = h1/h0 on the east column."""
    bad = np.argwhere(data.h0 <= 0.0)
    if bad.size:
        m, k = bad[0]
        raise DataIntegrityError(
            f"cannot take log of non-positive trace at angle index {data.angle_indices[m]}, node {k}"
        )
    s0 = np.log(data.h0)
    h0_east = data.h0[:, data.grid.east_slice]
    s1 = data.h1 / h0_east
    return LogTraces(data.grid, data.ring, data.angle_indices.copy(), s0, s1)


def theta_derivative(traces: LogTraces, ring: SourceRing) -> LogTraces:
    """Centered angular derivative of the traces.

    On a full ring the index wraps modulo the ring size (periodic model); on a
    contiguous window the derivative is defined at the inner angles only and
    the returned angle set shrinks by one at each end.
    """
    m = len(traces.angle_indices)
    if m < 3:
        raise GeometryError(f"need at least 3 angles for the angular derivative, got {m}")
    rho = ring.rho_theta
    if traces.full_ring:
        ds0 = (np.roll(traces.s0, -1, axis=0) - np.roll(traces.s0, 1, axis=0)) / (2.0 * rho)
        ds1 = (np.roll(traces.s1, -1, axis=0) - np.roll(traces.s1, 1, axis=0)) / (2.0 * rho)
        idx = traces.angle_indices.copy()
    else:
        steps = np.diff(traces.angle_indices)
        if np.any(steps != 1):
            raise GeometryError("angular derivative needs a contiguous angle window or a full ring")
        ds0 = (traces.s0[2:] - traces.s0[:-2]) / (2.0 * rho)
        ds1 = (traces.s1[2:] - traces.s1[:-2]) / (2.0 * rho)
        idx = traces.angle_indices[1:-1].copy()
    return LogTraces(traces.grid, traces.ring, idx, ds0, ds1)


def qp_boundary(
    traces: LogTraces, dtraces: LogTraces, theta0: float, epsilon: float
) -> QPBoundary:
    """Boundary data of the coupled system at angle theta0.

    q carries the plain angular derivative; p subtracts epsilon times the
    undifferentiated trace from it, on both the Dirichlet and flux sides.
    """
    angles = traces.ring.angles
    hit = np.nonzero(np.abs(angles - theta0) <= 1e-12 * max(1.0, abs(theta0)))[0]
    if hit.size == 0:
        raise GeometryError(f"theta0={theta0} is not a ring angle")
    k = int(hit[0])
    r_t = traces.row(k)
    r_d = dtraces.row(k)
    return QPBoundary(
        grid=traces.grid,
        theta0=float(angles[k]),
        epsilon=float(epsilon),
        q_dirichlet=dtraces.s0[r_d].copy(),
        q_neumann=dtraces.s1[r_d].copy(),
        p_dirichlet=dtraces.s0[r_d] - epsilon * traces.s0[r_t],
        p_neumann=dtraces.s1[r_d] - epsilon * traces.s1[r_t],
    )
