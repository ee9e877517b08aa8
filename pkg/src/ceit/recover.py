"""Conductivity recovery from a minimizing pair.

Chain: psi = (q - p)/eps, then r = -(lap(psi) + |grad(psi)|^2) on the coarse
interior, bilinear interpolation of r to the fine grid, least-squares solve of
lap(w) = r*w with the two outermost node layers pinned to one, and finally
sigma = w^2.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ceit.carleman import QPState
from ceit.discrete import ScalarField, d1x, d1y, laplacian
from ceit.errors import SolverError
from ceit.geometry import GridSpec


@dataclass(eq=False)
class Reconstruction:
    """Recovered fields plus the provenance of the run that produced them."""

    r_coarse: ScalarField
    r_fine: ScalarField
    w_fine: ScalarField
    sigma_fine: ScalarField
    provenance: dict[str, Any] = field(default_factory=dict)


def assemble_psi(state: QPState, eps: float) -> ScalarField:
    """Log-potential at the run angle: (q - p) / eps, valid on all nodes."""
    if eps <= 0.0:
        raise ValueError(f"eps must be positive, got {eps}")
    return ScalarField(state.grid, (state.q.values - state.p.values) / eps)


def recover_r(psi: ScalarField) -> ScalarField:
    """Potential coefficient -(lap(psi) + |grad(psi)|^2) on interior nodes.

    The boundary ring is set to zero: phantoms keep unit conductivity in a
    margin band inside the square, so the true coefficient vanishes there.
    """
    h = psi.grid.h
    v = psi.values
    out = np.zeros(psi.grid.shape)
    out[1:-1, 1:-1] = -(laplacian(v, h) + d1x(v, h) ** 2 + d1y(v, h) ** 2)
    return ScalarField(psi.grid, out)


def recover_r_averaged(psis: list[ScalarField]) -> ScalarField:
    """Mean of the single-angle recoveries over a collection of angles."""
    if not psis:
        raise ValueError("need at least one psi field")
    acc = np.zeros(psis[0].grid.shape)
    for psi in psis:
        acc += recover_r(psi).values
    return ScalarField(psis[0].grid, acc / len(psis))


def fine_grid(coarse: GridSpec, fine_n: int) -> GridSpec:
    """Grid over the same square with fine_n interior points per side."""
    if fine_n <= 4:
        raise ValueError(f"fine grid needs more than 4 interior points, got {fine_n}")
    side = coarse.h * (coarse.n + 1)
    return GridSpec(n=int(fine_n), h=side / (fine_n + 1), origin=coarse.origin)


def _interp_matrix(src_n: int, src_h: float, dst_n: int, dst_h: float) -> np.ndarray:
    """1-D linear interpolation weights from src nodes to dst nodes (same span)."""
    t = (dst_h * np.arange(dst_n + 2)) / src_h
    i0 = np.clip(np.floor(t).astype(int), 0, src_n)
    frac = t - i0
    R = np.zeros((dst_n + 2, src_n + 2))
    rows = np.arange(dst_n + 2)
    R[rows, i0] = 1.0 - frac
    R[rows, i0 + 1] += frac
    return R


def interp_to_fine(f: ScalarField, fine_n: int) -> ScalarField:
    """Bilinear interpolation onto a fine grid covering the same square.

    Exact on bilinear functions; values stay inside [min f, max f] because the
    weights are convex.
    """
    dst = fine_grid(f.grid, fine_n)
    R = _interp_matrix(f.grid.n, f.grid.h, dst.n, dst.h)
    return ScalarField(dst, R @ f.values @ R.T)


def qrm_solve(
    r_fine: ScalarField,
    rtol: float = 1e-8,
    maxiter: int = 200_000,
) -> ScalarField:
    """Least-squares solve of lap(w) - r*w = 0 with two node layers pinned to one.

    The pinned layers impose w = 1 and a vanishing normal derivative on the
    square's boundary at first order. Normal equations are solved by conjugate
    gradients from the constant-one start; failure to reach the residual
    target raises SolverError.
    """
    grid = r_fine.grid
    n, h = grid.n, grid.h
    if n < 5:
        raise ValueError("quasi-reversibility grid too small for two pinned layers")
    N = n + 2
    r_int = r_fine.values[1:-1, 1:-1]

    # rows: interior nodes (i, j = 1..n); columns: all nodes, split free/pinned
    def node(i, j):
        return i * N + j

    ii, jj = np.meshgrid(np.arange(1, n + 1), np.arange(1, n + 1), indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    rows = np.arange(ii.size)
    inv_h2 = 1.0 / (h * h)
    data, rcols = [], []
    for di, dj, coef in ((0, 0, None), (1, 0, inv_h2), (-1, 0, inv_h2), (0, 1, inv_h2), (0, -1, inv_h2)):
        if coef is None:
            vals = -4.0 * inv_h2 - r_int.ravel()
        else:
            vals = np.full(ii.size, coef)
        data.append(vals)
        rcols.append(node(ii + di, jj + dj))
    L = sp.coo_matrix(
        (np.concatenate(data), (np.tile(rows, 5), np.concatenate(rcols))),
        shape=(ii.size, N * N),
    ).tocsc()

    layer = np.minimum.reduce(
        [
            np.arange(N)[:, None] * np.ones(N, int),
            np.arange(N)[None, :] * np.ones((N, 1), int),
            (N - 1 - np.arange(N))[:, None] * np.ones(N, int),
            (N - 1 - np.arange(N))[None, :] * np.ones((N, 1), int),
        ]
    )
    free = (layer >= 2).ravel()
    A = L[:, free].tocsr()
    b = -np.asarray(L[:, ~free].sum(axis=1)).ravel()  # pinned values are all one

    AtA = (A.T @ A).tocsr()
    Atb = A.T @ b
    x0 = np.ones(int(free.sum()))
    x, info = spla.cg(AtA, Atb, x0=x0, rtol=rtol, atol=0.0, maxiter=maxiter)
    if info != 0:
        res = float(np.linalg.norm(AtA @ x - Atb) / max(np.linalg.norm(Atb), 1e-300))
        raise SolverError(
            f"quasi-reversibility CG stopped after {maxiter} iterations at relative residual {res:.3e}"
        )
    w = np.ones(N * N)
    w[free] = x
    return ScalarField(grid, w.reshape(N, N))


def sigma_from_w(w: ScalarField) -> tuple[ScalarField, bool]:
    """Square the recovered root-conductivity; flags if w dipped negative."""
    negative = bool(np.any(w.values < 0.0))
    return ScalarField(w.grid, w.values ** 2), negative


def reconstruct_from_dataset(
    data,
    cfg,
    theta0: float | None = None,
    mode: str = "single-theta",
    fine_n: int = 126,
    opts=None,
):
    """Full inversion from a boundary dataset to a conductivity image.

    ``theta0`` defaults to the ring angle nearest pi (avoiding the ring seam);
    in averaged mode one minimization runs per available derivative angle and
    the recovered coefficients are averaged. Returns (Reconstruction, reports).
    """
    import math

    from ceit.minimize import MinimizeOptions, initial_guess, minimize_j
    from ceit.transform import log_traces, qp_boundary, theta_derivative

    if mode not in ("single-theta", "averaged"):
        raise ValueError(f"mode must be 'single-theta' or 'averaged', got {mode!r}")
    if opts is None:
        # reconstruction quality needs deep stationarity, not the optimizer's
        # looser relative default
        opts = MinimizeOptions(max_iter=400, grad_tol=1e-12, grad_tol_abs=1e-8)

    traces = log_traces(data)
    dtraces = theta_derivative(traces, data.ring)

    if mode == "single-theta":
        if theta0 is None:
            usable = data.ring.angles[dtraces.angle_indices]
            theta0 = float(usable[np.argmin(np.abs(usable - math.pi))])
        thetas = [theta0]
    else:
        thetas = [float(a) for a in data.ring.angles[dtraces.angle_indices]]

    reports = []
    psis = []
    for th in thetas:
        boundary = qp_boundary(traces, dtraces, th, cfg.epsilon)
        report = minimize_j(initial_guess(boundary, data.grid), cfg, opts)
        reports.append(report)
        psis.append(assemble_psi(report.state, cfg.epsilon))

    r_coarse = recover_r(psis[0]) if mode == "single-theta" else recover_r_averaged(psis)
    r_f = interp_to_fine(r_coarse, fine_n)
    # The root-conductivity satisfies lap(w) = (lap(psi) + |grad psi|^2) * w,
    # which is the negative of the printed recovery formula; the sign surfaces
    # on any non-constant conductivity and is corrected here (see the ledger).
    w = qrm_solve(ScalarField(r_f.grid, -r_f.values))
    sigma, negative = sigma_from_w(w)
    recon = Reconstruction(
        r_coarse=r_coarse,
        r_fine=r_f,
        w_fine=w,
        sigma_fine=sigma,
        provenance={
            "kappa": cfg.kappa,
            "alpha": cfg.alpha,
            "epsilon": cfg.epsilon,
            "lambda_neumann": cfg.lambda_neumann,
            "A": cfg.A,
            "theta0": thetas if mode == "averaged" else thetas[0],
            "mode": mode,
            "grid_n": data.grid.n,
            "grid_h": data.grid.h,
            "fine_n": fine_n,
            "w_negative": negative,
            "a_ball_violated": any(r.a_ball_violated for r in reports),
        },
    )
    return recon, reports
