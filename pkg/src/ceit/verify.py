"""Numerical probes of the objective's convexity and accuracy behavior.

These are empirical companions to the method's theory: second-order gap
statistics over random data-consistent pairs, reconstruction error scaling in
the grid step and regularization weight, and an exponentially weighted
operator-ratio table (diagnostic only; its hidden constants are unknowable).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from ceit.carleman import CarlemanConfig, QPState, eval_j, grad_j
from ceit.discrete import (
    ScalarField,
    d1x,
    d1y,
    d2x,
    d2y,
    dxy,
    h2h_sq,
    laplacian,
    norm_l2h,
    one_sided_dx_all,
    rect_quad,
)
from ceit.forward import BoundaryDataset
from ceit.geometry import GridSpec
from ceit.minimize import MinimizeOptions, initial_guess
from ceit.transform import log_traces, qp_boundary, theta_derivative


@dataclass(eq=False)
class ProbeReport:
    records: list[dict[str, float]]
    summary: dict[str, float]
    config: dict[str, Any] = field(default_factory=dict)
    seed: int = 0


def sine_bump(grid: GridSpec, rng: np.random.Generator, amplitude: float, modes: int = 4) -> np.ndarray:
    """Random sine series, zero on the boundary ring, scaled to max-abs amplitude."""
    n = grid.n
    t = np.arange(n + 2) / (n + 1)
    out = np.zeros(grid.shape)
    for k in range(1, modes + 1):
        for l in range(1, modes + 1):
            c = rng.normal() / (k * k + l * l)
            out += c * np.outer(np.sin(np.pi * k * t), np.sin(np.pi * l * t))
    m = np.max(np.abs(out))
    return out * (amplitude / m) if m > 0 else out


def _perturbed(base: QPState, dq: np.ndarray, dp: np.ndarray) -> QPState:
    st = base.copy()
    st.q.values[1:-1, 1:-1] += dq[1:-1, 1:-1]
    st.p.values[1:-1, 1:-1] += dp[1:-1, 1:-1]
    return st


def convexity_probe(
    data: BoundaryDataset,
    cfg: CarlemanConfig,
    samples: int,
    amplitude: float = 0.1,
    seed: int = 0,
    theta0: float | None = None,
    kappa: float | None = None,
) -> ProbeReport:
    """Second-order gap statistics over pairs sharing the run's boundary data.

    gap = J(u2) - J(u1) - <grad J(u1), u2 - u1>. Each record also carries the
    exact quadratic-part gaps (regularization and flux penalty) and the
    residual-part remainder, so gap = alpha_form + neumann_form + f_gap holds
    to rounding.
    """
    if samples < 1:
        raise ValueError("need at least one sample")
    ring = data.ring
    traces = log_traces(data)
    dtraces = theta_derivative(traces, ring)
    if theta0 is None:
        usable = ring.angles[dtraces.angle_indices]
        theta0 = float(usable[np.argmin(np.abs(usable - np.pi))])
    boundary = qp_boundary(traces, dtraces, theta0, cfg.epsilon)
    base = initial_guess(boundary, data.grid)
    rng = np.random.default_rng(seed)
    grid = data.grid

    records = []
    for _ in range(samples):
        u1 = _perturbed(base, sine_bump(grid, rng, amplitude), sine_bump(grid, rng, amplitude))
        du_q = sine_bump(grid, rng, amplitude)
        du_p = sine_bump(grid, rng, amplitude)
        u2 = _perturbed(u1, du_q, du_p)

        j1 = eval_j(u1, cfg, kappa=kappa)
        j2 = eval_j(u2, cfg, kappa=kappa)
        gq, gp = grad_j(u1, cfg, kappa=kappa)
        inner = float(np.sum(gq.values * (u2.q.values - u1.q.values)))
        inner += float(np.sum(gp.values * (u2.p.values - u1.p.values)))
        gap = j2.total - j1.total - inner

        # quadratic parts expand exactly; their gap is the quadratic form of the step
        alpha_form = j2.alpha_part - j1.alpha_part - _alpha_inner(u1, u2, cfg)
        neumann_form = j2.neumann_part - j1.neumann_part - _neumann_inner(u1, u2, cfg)
        f_gap = (j2.f_part - j1.f_part) - (inner - _alpha_inner(u1, u2, cfg) - _neumann_inner(u1, u2, cfg))
        records.append(
            {
                "gap": gap,
                "alpha_form": alpha_form,
                "neumann_form": neumann_form,
                "f_gap": f_gap,
            }
        )

    gaps = np.array([r["gap"] for r in records])
    bounds = np.array([r["alpha_form"] for r in records])
    summary = {
        "min_gap": float(gaps.min()),
        "frac_nonneg": float(np.mean(gaps >= 0.0)),
        "frac_ge_alpha_bound": float(np.mean(gaps >= bounds - 1e-12 * np.abs(bounds))),
    }
    config = {
        "kappa": cfg.kappa if kappa is None else kappa,
        "alpha": cfg.alpha,
        "epsilon": cfg.epsilon,
        "lambda_neumann": cfg.lambda_neumann,
        "samples": samples,
        "amplitude": amplitude,
        "theta0": theta0,
    }
    return ProbeReport(records=records, summary=summary, config=config, seed=seed)


def _alpha_inner(u1: QPState, u2: QPState, cfg: CarlemanConfig) -> float:
    """<grad of the alpha part at u1, u2 - u1> via the part-isolated gradient."""
    iso = _replace(cfg, f_weight=0.0, lambda_neumann=0.0)
    gq, gp = grad_j(u1, iso)
    return float(
        np.sum(gq.values * (u2.q.values - u1.q.values))
        + np.sum(gp.values * (u2.p.values - u1.p.values))
    )


def _neumann_inner(u1: QPState, u2: QPState, cfg: CarlemanConfig) -> float:
    iso_full = _replace(cfg, f_weight=0.0)
    iso_alpha = _replace(cfg, f_weight=0.0, lambda_neumann=0.0)
    gq_f, gp_f = grad_j(u1, iso_full)
    gq_a, gp_a = grad_j(u1, iso_alpha)
    return float(
        np.sum((gq_f.values - gq_a.values) * (u2.q.values - u1.q.values))
        + np.sum((gp_f.values - gp_a.values) * (u2.p.values - u1.p.values))
    )


def _replace(cfg: CarlemanConfig, **kw) -> CarlemanConfig:
    from dataclasses import replace

    return replace(cfg, **kw)


def carleman_diagnostic(
    samples: int,
    kappa_list: list[float],
    grid: GridSpec,
    seed: int = 0,
    amplitude: float = 1.0,
) -> dict[float, float]:
    """Empirical weighted operator-ratio table.

    For each kappa, reports the minimum over random admissible fields of
    [weighted (lap u)^2 integral] divided by [kappa^-1 * weighted second
    derivatives + kappa * weighted gradient + kappa^3 * weighted level]. The
    sample fields vanish on the boundary ring and have zero one-sided east
    derivative. Diagnostic only: no pass/fail is attached to the magnitudes.
    """
    rng = np.random.default_rng(seed)
    h = grid.h
    x_w = grid.xs()
    ratios: dict[float, float] = {}
    fields = []
    for _ in range(samples):
        u = sine_bump(grid, rng, amplitude)
        # projection: zero the one-sided x-derivative on the east column;
        # (3*u[n+1] - 4*u[n] + u[n-1]) / 2h = 0 with u[n+1] = 0 -> u[n-1] = 4*u[n]
        u[-3, :] = 4.0 * u[-2, :]
        fields.append(u)

    for kappa in kappa_list:
        w_full = np.exp(2.0 * kappa * x_w * x_w)[:, None] * np.ones(grid.shape)
        worst = np.inf
        for u in fields:
            if not np.any(u):
                continue
            w_int = w_full[1:-1, 1:-1]
            lap = laplacian(u, h)
            num = h * h * float(np.sum(lap * lap * w_int))
            second = (
                d2x(u, h) ** 2 + dxy(u, h) ** 2 + d2y(u, h) ** 2
            )
            grad2 = d1x(u, h) ** 2 + d1y(u, h) ** 2
            den = h * h * (
                (1.0 / kappa) * float(np.sum(second * w_int))
                + kappa * float(np.sum(grad2 * w_int))
                + kappa**3 * float(np.sum(u[1:-1, 1:-1] ** 2 * w_int))
            )
            if den > 0.0:
                worst = min(worst, num / den)
        ratios[float(kappa)] = float(worst)
    return ratios


def accuracy_sweep(
    datasets_by_n: dict[int, BoundaryDataset],
    sigma_true_fine: ScalarField,
    cfg: CarlemanConfig,
    alpha_list: list[float] | None = None,
    fine_n: int = 126,
    opts: MinimizeOptions | None = None,
) -> list[dict[str, float]]:
    """Reconstruction error and wall time per (grid step, alpha) cell.

    ``datasets_by_n`` maps interior-point counts to boundary datasets of the
    same phantom; errors are measured on the fine grid against the truth.
    """
    from ceit.recover import reconstruct_from_dataset

    alpha_list = alpha_list or [cfg.alpha]
    rows = []
    for n, data in sorted(datasets_by_n.items()):
        for alpha in alpha_list:
            run_cfg = _replace(cfg, alpha=alpha)
            t0 = time.perf_counter()
            recon, _ = reconstruct_from_dataset(data, run_cfg, fine_n=fine_n, opts=opts)
            wall = time.perf_counter() - t0
            diff = ScalarField(
                sigma_true_fine.grid, recon.sigma_fine.values - sigma_true_fine.values
            )
            rows.append(
                {
                    "n": n,
                    "h": data.grid.h,
                    "alpha": alpha,
                    "error_l2h": norm_l2h(diff),
                    "wall_time": wall,
                }
            )
    return rows
