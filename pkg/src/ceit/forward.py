"""Forward conductivity solves on the disk and boundary-trace extraction.

For each source angle the equation ``div(sigma grad v) = -g(x - x0)`` is solved
on the outer disk with homogeneous Dirichlet data by piecewise-linear finite
elements on a structured ring triangulation, and the voltage / x-derivative
traces are sampled on the square grid's boundary nodes.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.integrate
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.spatial import cKDTree

from ceit.errors import DataIntegrityError, GeometryError, MeshGeometryError, SolverError
from ceit.geometry import DomainSpec, GridSpec, SourceRing

TWO_PI = 2.0 * math.pi


# ---------------------------------------------------------------------------
# mesh
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class TriMesh:
    """Conforming triangulation of the disk.

    vertices       : (N, 2) coordinates
    triangles      : (M, 3) vertex indices, positively oriented
    boundary_flags : (N,) True on the outer circle
    target_edge    : nominal edge length the mesh was built for
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_flags: np.ndarray
    target_edge: float

    _vertex_tris: list[np.ndarray] = field(default=None, repr=False)  # type: ignore[assignment]

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        return 0.5 * (
            (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
            - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1])
        )

    def edge_lengths(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        e = np.concatenate(
            [p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]], axis=0
        )
        return np.hypot(e[:, 0], e[:, 1])

    def vertex_triangles(self) -> list[np.ndarray]:
        """Incident triangle indices per vertex (built lazily, cached)."""
        if self._vertex_tris is None:
            buckets: list[list[int]] = [[] for _ in range(self.n_vertices)]
            for t, tri in enumerate(self.triangles):
                for v in tri:
                    buckets[v].append(t)
            self._vertex_tris = [np.asarray(b, dtype=int) for b in buckets]
        return self._vertex_tris


@dataclass(eq=False)
class MeshField:
    """One real value per mesh vertex."""

    mesh: TriMesh
    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.n_vertices,):
            raise ValueError("mesh field length does not match vertex count")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("mesh field contains non-finite values")


def triangulate_disk(domain: DomainSpec, target_edge: float) -> TriMesh:
    """Structured ring triangulation of the outer disk.

    Ring k of K carries 6k equally spaced nodes at radius k*D/K; annuli are
    triangulated by an angular merge sweep, giving a conforming quasi-uniform
    mesh whose longest edge stays below 1.5 * target_edge.
    """
    if not (0.0 < target_edge < domain.D):
        raise GeometryError(
            f"target edge must lie in (0, D), got {target_edge} with D={domain.D}"
        )
    K = max(2, math.ceil(domain.D / target_edge))
    dr = domain.D / K
    cx, cy = domain.center

    verts = [(cx, cy)]
    ring_start = [0]  # first vertex index of ring k (ring 0 = center)
    for k in range(1, K + 1):
        m = 6 * k
        ang = TWO_PI * np.arange(m) / m
        r = k * dr
        ring_start.append(len(verts))
        verts.extend(zip(cx + r * np.cos(ang), cy + r * np.sin(ang)))
    vertices = np.asarray(verts)

    tris: list[tuple[int, int, int]] = []
    # center fan
    s1 = ring_start[1]
    for o in range(6):
        tris.append((0, s1 + o, s1 + (o + 1) % 6))
    # annuli
    for k in range(2, K + 1):
        mi, mo = 6 * (k - 1), 6 * k
        si, so = ring_start[k - 1], ring_start[k]
        i = o = 0
        while i < mi or o < mo:
            ang_i_next = (i + 1) / mi
            ang_o_next = (o + 1) / mo
            if o < mo and (i == mi or ang_o_next < ang_i_next):
                tris.append((si + i % mi, so + o % mo, so + (o + 1) % mo))
                o += 1
            else:
                tris.append((si + i % mi, so + o % mo, si + (i + 1) % mi))
                i += 1
    triangles = np.asarray(tris, dtype=int)

    flags = np.zeros(len(vertices), dtype=bool)
    flags[ring_start[K] :] = True

    mesh = TriMesh(vertices, triangles, flags, float(target_edge))
    areas = mesh.signed_areas()
    if np.any(areas <= 0.0):
        raise GeometryError("triangulation produced a non-positive triangle area")
    max_edge = float(mesh.edge_lengths().max())
    if max_edge > 1.5 * target_edge:
        raise GeometryError(
            f"mesh quality violated: max edge {max_edge:.4g} > 1.5 * {target_edge:.4g}"
        )
    radii = np.hypot(vertices[flags, 0] - cx, vertices[flags, 1] - cy)
    if np.any(np.abs(radii - domain.D) > 1e-9 * domain.D):
        raise GeometryError("boundary vertex off the outer circle")
    return mesh


# ---------------------------------------------------------------------------
# mollified point source
# ---------------------------------------------------------------------------


@lru_cache(maxsize=32)
def mollifier_constant(xi: float) -> float:
    """Normalization making the bump integrate to one over its support disk."""
    integral, _ = scipy.integrate.quad(
        lambda rho: math.exp(rho * rho / (rho * rho - xi * xi)) * rho, 0.0, xi
    )
    return 1.0 / (TWO_PI * integral)


def mollifier(x: np.ndarray, x0: np.ndarray, xi: float) -> np.ndarray:
    """Compactly supported bump approximating a unit point source at x0.

    Vanishes for |x - x0| >= xi; total function of the point coordinates.
    """
    x = np.asarray(x, dtype=float)
    d2 = np.sum((x - np.asarray(x0, dtype=float)) ** 2, axis=-1)
    out = np.zeros_like(d2)
    inside = d2 < xi * xi
    if np.any(inside):
        out[inside] = mollifier_constant(xi) * np.exp(d2[inside] / (d2[inside] - xi * xi))
    return out


# ---------------------------------------------------------------------------
# P1 finite elements
# ---------------------------------------------------------------------------


def _p1_geometry(mesh: TriMesh):
    """Per-triangle areas and basis gradient coefficients."""
    p = mesh.vertices[mesh.triangles]  # (M, 3, 2)
    x, y = p[..., 0], p[..., 1]
    # grad(phi_i) = (b_i, c_i) / (2A)
    b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    area = 0.5 * (
        (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
    )
    return area, b, c


def assemble_stiffness(mesh: TriMesh, sigma: MeshField) -> sp.csr_matrix:
    """Stiffness matrix with per-triangle conductivity (vertex mean)."""
    area, b, c = _p1_geometry(mesh)
    sig_t = sigma.values[mesh.triangles].mean(axis=1)
    coef = sig_t / (4.0 * area)
    rows, cols, vals = [], [], []
    for i in range(3):
        for j in range(3):
            rows.append(mesh.triangles[:, i])
            cols.append(mesh.triangles[:, j])
            vals.append(coef * (b[:, i] * b[:, j] + c[:, i] * c[:, j]))
    K = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(mesh.n_vertices, mesh.n_vertices),
    )
    return K.tocsr()


@lru_cache(maxsize=4)
def _refined_midpoint_rule(levels: int):
    """Barycentric points/weights: midpoint rule on 4**levels uniform sub-triangles."""
    tris = [np.eye(3)]
    for _ in range(levels):
        nxt = []
        for t in tris:
            a, b, c = t
            ab, bc, ca = (a + b) / 2, (b + c) / 2, (c + a) / 2
            nxt += [
                np.array([a, ab, ca]),
                np.array([ab, b, bc]),
                np.array([ca, bc, c]),
                np.array([ab, bc, ca]),
            ]
        tris = nxt
    pts = []
    for t in tris:
        a, b, c = t
        pts += [(a + b) / 2, (b + c) / 2, (c + a) / 2]
    lam = np.asarray(pts)
    w = np.full(len(pts), 1.0 / (4.0 ** levels) / 3.0)
    return lam, w


def assemble_load(mesh: TriMesh, x0: np.ndarray, xi: float) -> np.ndarray:
    """Load vector for the mollified source; refined quadrature on its support."""
    x0 = np.asarray(x0, dtype=float)
    area, _, _ = _p1_geometry(mesh)
    cent = mesh.vertices[mesh.triangles].mean(axis=1)
    near = np.hypot(cent[:, 0] - x0[0], cent[:, 1] - x0[1]) < xi + 2.0 * mesh.target_edge
    b = np.zeros(mesh.n_vertices)
    if not np.any(near):
        return b
    lam, w = _refined_midpoint_rule(2)
    tri_near = mesh.triangles[near]
    p = mesh.vertices[tri_near]  # (Mn, 3, 2)
    pts = np.einsum("qk,mkd->mqd", lam, p)  # (Mn, Q, 2)
    g = mollifier(pts, x0, xi)  # (Mn, Q)
    contrib = np.einsum("m,mq,qk->mk", area[near], g * w, lam)
    np.add.at(b, tri_near.ravel(), contrib.ravel())
    return b


def solve_forward(
    mesh: TriMesh,
    sigma: MeshField,
    x0: np.ndarray,
    xi: float,
    rtol: float = 1e-10,
    maxiter: int = 20000,
    stiffness: sp.csr_matrix | None = None,
) -> MeshField:
    """Solve div(sigma grad v) = -g(x - x0), v = 0 on the outer circle.

    Diagonally preconditioned conjugate gradients on the interior unknowns;
    non-convergence raises SolverError with the final relative residual.
    """
    if np.min(sigma.values) < 1.0 - 1e-12:
        raise DataIntegrityError("conductivity must satisfy sigma >= 1 everywhere")
    K = assemble_stiffness(mesh, sigma) if stiffness is None else stiffness
    b = assemble_load(mesh, x0, xi)
    free = ~mesh.boundary_flags
    Kff = K[free][:, free].tocsr()
    bf = b[free]
    dinv = 1.0 / Kff.diagonal()
    M = spla.LinearOperator(Kff.shape, matvec=lambda r: dinv * r)
    sol, info = spla.cg(Kff, bf, rtol=rtol, atol=0.0, maxiter=maxiter, M=M)
    if info != 0:
        res = float(np.linalg.norm(Kff @ sol - bf) / max(np.linalg.norm(bf), 1e-300))
        raise SolverError(
            f"forward CG did not converge after {maxiter} iterations; relative residual {res:.3e}"
        )
    v = np.zeros(mesh.n_vertices)
    v[free] = sol
    return MeshField(mesh, v)


def greens_disk(x: np.ndarray, x0: np.ndarray, center: tuple[float, float], D: float) -> np.ndarray:
    """Dirichlet Green's function of the disk (unit source at x0, zero on the circle)."""
    x = np.asarray(x, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    c0 = np.asarray(center, dtype=float)
    rho0 = np.linalg.norm(x0 - c0)
    x0_star = c0 + (D * D / rho0**2) * (x0 - c0)
    d_star = np.linalg.norm(x - x0_star, axis=-1)
    d = np.linalg.norm(x - x0, axis=-1)
    return (np.log(rho0 * d_star / D) - np.log(d)) / TWO_PI


# ---------------------------------------------------------------------------
# trace extraction
# ---------------------------------------------------------------------------


class _PointLocator:
    """Barycentric point location backed by a vertex KD-tree."""

    def __init__(self, mesh: TriMesh):
        self.mesh = mesh
        self.tree = cKDTree(mesh.vertices)
        self.vertex_tris = mesh.vertex_triangles()
        area, b, c = _p1_geometry(mesh)
        self.area, self.b, self.c = area, b, c

    def locate(self, pt: np.ndarray) -> tuple[int, np.ndarray]:
        """Containing triangle index and barycentric coordinates of pt."""
        for k in (8, 32, 128):
            _, idx = self.tree.query(pt, k=min(k, self.mesh.n_vertices))
            cand = np.unique(np.concatenate([self.vertex_tris[v] for v in np.atleast_1d(idx)]))
            for t in cand:
                lam = self._bary(int(t), pt)
                if np.all(lam >= -1e-10):
                    return int(t), lam
        raise MeshGeometryError(f"grid node {tuple(pt)} lies outside the triangulation")

    def _bary(self, t: int, pt: np.ndarray) -> np.ndarray:
        tri = self.mesh.triangles[t]
        p = self.mesh.vertices[tri]
        v0, v1, v2 = p
        den = (v1[1] - v2[1]) * (v0[0] - v2[0]) + (v2[0] - v1[0]) * (v0[1] - v2[1])
        l0 = ((v1[1] - v2[1]) * (pt[0] - v2[0]) + (v2[0] - v1[0]) * (pt[1] - v2[1])) / den
        l1 = ((v2[1] - v0[1]) * (pt[0] - v2[0]) + (v0[0] - v2[0]) * (pt[1] - v2[1])) / den
        return np.array([l0, l1, 1.0 - l0 - l1])


def triangle_gradients(mesh: TriMesh, v: MeshField) -> np.ndarray:
    """Constant per-triangle gradient of a P1 field, shape (M, 2)."""
    area, b, c = _p1_geometry(mesh)
    vals = v.values[mesh.triangles]
    gx = np.sum(vals * b, axis=1) / (2.0 * area)
    gy = np.sum(vals * c, axis=1) / (2.0 * area)
    return np.stack([gx, gy], axis=1)


def vertex_gradients(mesh: TriMesh, v: MeshField) -> np.ndarray:
    """Area-weighted average of incident triangle gradients per vertex."""
    tg = triangle_gradients(mesh, v)
    area = np.abs(mesh.signed_areas())
    num = np.zeros((mesh.n_vertices, 2))
    den = np.zeros(mesh.n_vertices)
    for i in range(3):
        np.add.at(num, mesh.triangles[:, i], tg * area[:, None])
        np.add.at(den, mesh.triangles[:, i], area)
    return num / den[:, None]


@dataclass(eq=False)
class BoundaryDataset:
    """Per-angle Dirichlet / flux traces on a grid's boundary nodes.

    h0 rows hold voltage values at all boundary nodes in the canonical
    per-side order (length 4n+8); h1 rows hold x-derivative values on the
    east column (length n+2). ``angle_indices`` are 0-based positions into
    the ring's angle list; a dataset may cover only a window of the ring.
    """

    domain: DomainSpec
    grid: GridSpec
    ring: SourceRing
    angle_indices: np.ndarray
    h0: np.ndarray
    h1: np.ndarray

    def __post_init__(self) -> None:
        self.angle_indices = np.asarray(self.angle_indices, dtype=int)
        self.h0 = np.asarray(self.h0, dtype=float)
        self.h1 = np.asarray(self.h1, dtype=float)
        n = self.grid.n
        if self.h0.shape != (len(self.angle_indices), 4 * n + 8):
            raise ValueError(f"h0 shape {self.h0.shape} != ({len(self.angle_indices)}, {4*n+8})")
        if self.h1.shape != (len(self.angle_indices), n + 2):
            raise ValueError(f"h1 shape {self.h1.shape} != ({len(self.angle_indices)}, {n+2})")
        bad = np.argwhere(self.h0 <= 0.0)
        if bad.size:
            m, k = bad[0]
            raise DataIntegrityError(
                f"non-positive voltage trace at angle index {self.angle_indices[m]}, boundary node {k}"
            )

    @property
    def angles(self) -> np.ndarray:
        return self.ring.angles[self.angle_indices]


def boundary_points(domain: DomainSpec, grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Physical coordinates of the canonical boundary nodes and east-column nodes."""
    xs, ys = grid.xs(), grid.ys()
    bi, bj = grid.boundary_indices()
    gb = np.stack([xs[bi], ys[bj]], axis=1)
    gi, gj = grid.gamma0_indices()
    gg = np.stack([xs[gi], ys[gj]], axis=1)
    return gb, gg


def extract_traces(
    solutions: list[MeshField],
    mesh: TriMesh,
    domain: DomainSpec,
    grid: GridSpec,
    ring: SourceRing,
    angle_indices: np.ndarray | list[int],
) -> BoundaryDataset:
    """Sample voltage and x-derivative traces for a list of per-angle solutions."""
    angle_indices = np.asarray(angle_indices, dtype=int)
    if len(solutions) != len(angle_indices):
        raise ValueError("one solution per requested angle is required")
    pts_b, pts_g = boundary_points(domain, grid)
    loc = _PointLocator(mesh)
    b_cells = [loc.locate(p) for p in pts_b]
    g_cells = [loc.locate(p) for p in pts_g]

    h0 = np.empty((len(solutions), pts_b.shape[0]))
    h1 = np.empty((len(solutions), pts_g.shape[0]))
    for m, v in enumerate(solutions):
        vg = vertex_gradients(mesh, v)
        for k, (t, lam) in enumerate(b_cells):
            h0[m, k] = float(lam @ v.values[mesh.triangles[t]])
        for k, (t, lam) in enumerate(g_cells):
            h1[m, k] = float(lam @ vg[mesh.triangles[t], 0])
    return BoundaryDataset(domain, grid, ring, angle_indices, h0, h1)


# ---------------------------------------------------------------------------
# sweep driver
# ---------------------------------------------------------------------------

_SWEEP_STATE: dict = {}


def _sweep_init(mesh, sigma_values, xi, stiffness):
    _SWEEP_STATE["mesh"] = mesh
    _SWEEP_STATE["sigma"] = MeshField(mesh, sigma_values)
    _SWEEP_STATE["xi"] = xi
    _SWEEP_STATE["stiffness"] = stiffness


def _sweep_solve(args):
    idx, x0 = args
    st = _SWEEP_STATE
    v = solve_forward(st["mesh"], st["sigma"], x0, st["xi"], stiffness=st["stiffness"])
    return idx, v.values


def forward_sweep(
    mesh: TriMesh,
    sigma: MeshField,
    domain: DomainSpec,
    ring: SourceRing,
    grids: list[GridSpec],
    angle_indices: np.ndarray | list[int] | None = None,
    jobs: int = 1,
) -> list[BoundaryDataset]:
    """Solve the forward problem per source angle and extract one dataset per grid.

    ``angle_indices`` selects a subset of ring angles (default: all). Solves
    are independent; with jobs > 1 they run in a process pool and results are
    reassembled in angle order.
    """
    if angle_indices is None:
        angle_indices = np.arange(ring.count)
    angle_indices = np.asarray(sorted(int(i) for i in angle_indices), dtype=int)
    if np.any(angle_indices < 0) or np.any(angle_indices >= ring.count):
        raise ValueError("angle index outside the ring")
    x0s = domain.source_point(ring.angles[angle_indices])
    K = assemble_stiffness(mesh, sigma)

    sols: list[MeshField | None] = [None] * len(angle_indices)
    if jobs > 1:
        tasks = list(enumerate(x0s))
        with ProcessPoolExecutor(
            max_workers=jobs,
            initializer=_sweep_init,
            initargs=(mesh, sigma.values, domain.xi, K),
        ) as ex:
            for idx, values in ex.map(_sweep_solve, tasks):
                sols[idx] = MeshField(mesh, values)
    else:
        for idx, x0 in enumerate(x0s):
            sols[idx] = solve_forward(mesh, sigma, x0, domain.xi, stiffness=K)

    return [
        extract_traces(sols, mesh, domain, g, ring, angle_indices)  # type: ignore[arg-type]
        for g in grids
    ]
