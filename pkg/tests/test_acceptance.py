"""Acceptance suite: every exit criterion at its stated tolerance.

Each test prints one PASS/FAIL line. Heavier shared inputs (forward sweeps on
the benchmark mesh) are computed once per session.
"""

import math
import time

import numpy as np
import pytest

from ceit.carleman import CarlemanConfig, QPState, eval_j, grad_j
from ceit.discrete import ScalarField, fd_apply, h2h_sq, norm_l2h, rect_quad
from ceit.forward import MeshField, forward_sweep, triangulate_disk
from ceit.geometry import build_grid, benchmark_domain, benchmark_ring
from ceit.minimize import MinimizeOptions, initial_guess, minimize_j
from ceit.phantoms import disk_mask, rasterize_phantom
from ceit.recover import fine_grid, qrm_solve, reconstruct_from_dataset
from ceit.transform import QPBoundary
from ceit.verify import carleman_diagnostic, convexity_probe, sine_bump


def report(name: str, ok: bool, detail: str) -> None:
    print(f"\nACCEPTANCE {name}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"{name}: {detail}"


@pytest.fixture(scope="module")
def bench():
    """Benchmark geometry, desk mesh, and the sigma=1 boundary data at n=19."""
    domain = benchmark_domain()
    ring = benchmark_ring()
    mesh = triangulate_disk(domain, 1.0 / 40.0)
    sigma1 = MeshField(mesh, np.ones(mesh.n_vertices))
    grid19 = build_grid(domain, 19)
    ds19 = forward_sweep(mesh, sigma1, domain, ring, [grid19], angle_indices=[98, 99, 100])[0]
    return {"domain": domain, "ring": ring, "mesh": mesh, "sigma1": sigma1, "ds19": ds19}


@pytest.fixture(scope="module")
def disk_case(bench):
    """Disk-inclusion phantom with boundary data on three coarse grids."""
    domain, ring, mesh = bench["domain"], bench["ring"], bench["mesh"]
    fg = fine_grid(build_grid(domain, 19), 126)
    phantom = rasterize_phantom(disk_mask(fg, (0.5, 0.5), 0.18), fg, smooth_width=2.0, phantom_id="disk")
    from ceit.cli import sigma_on_mesh

    sig_mesh = sigma_on_mesh(mesh, phantom)
    grids = [build_grid(domain, n) for n in (9, 19, 39)]
    datasets = forward_sweep(mesh, sig_mesh, domain, ring, grids, angle_indices=[98, 99, 100])
    return {"phantom": phantom, "datasets": {g.n: d for g, d in zip(grids, datasets)}}


def test_constant_conductivity_identity(bench):
    """sigma* = 1 end to end: uniform image and tiny recovered coefficient."""
    t0 = time.perf_counter()
    domain, ring = bench["domain"], bench["ring"]
    mesh = triangulate_disk(domain, 1.0 / 40.0)
    sigma1 = MeshField(mesh, np.ones(mesh.n_vertices))
    grid = build_grid(domain, 19)
    ds = forward_sweep(mesh, sigma1, domain, ring, [grid], angle_indices=[98, 99, 100])[0]
    cfg = CarlemanConfig(kappa=3.0, alpha=0.01, epsilon=2e-4)
    recon, _ = reconstruct_from_dataset(ds, cfg, fine_n=126)
    elapsed = time.perf_counter() - t0

    sig_err = float(np.max(np.abs(recon.sigma_fine.values - 1.0)))
    r_norm = norm_l2h(recon.r_coarse)
    ok = sig_err <= 0.05 and r_norm <= 0.05 and elapsed <= 600.0
    report(
        "constant-conductivity identity",
        ok,
        f"max|sigma-1|={sig_err:.4f}<=0.05, ||r||={r_norm:.4f}<=0.05, runtime={elapsed:.0f}s<=600s",
    )


def test_gradient_exactness(bench):
    """Closed-form gradient vs central finite differences on 20 random pairs."""
    grid = build_grid(bench["domain"], 9)
    rng = np.random.default_rng(42)
    cfg = CarlemanConfig()
    worst = 0.0
    for _ in range(20):
        full = rng.normal(size=grid.shape) * 0.3
        bi, bj = grid.boundary_indices()
        q_d = full[bi, bj]
        ng = grid.n + 2
        b = QPBoundary(
            grid=grid,
            theta0=math.pi,
            epsilon=cfg.epsilon,
            q_dirichlet=q_d,
            q_neumann=rng.normal(size=ng) * 0.3,
            p_dirichlet=q_d - cfg.epsilon * rng.normal(size=grid.shape)[bi, bj],
            p_neumann=rng.normal(size=ng) * 0.3,
        )
        q = sine_bump(grid, rng, 0.4) + rng.normal(size=grid.shape) * 0.02
        p = q - cfg.epsilon * sine_bump(grid, rng, 1.0)
        st = QPState(ScalarField(grid, q), ScalarField(grid, p), b)
        dq = sine_bump(grid, rng, 1.0)
        dp = sine_bump(grid, rng, 1.0)
        gq, gp = grad_j(st, cfg)
        analytic = float(np.sum(gq.values * dq) + np.sum(gp.values * dp))
        scale = max(1.0, np.max(np.abs(st.q.values)), np.max(np.abs(st.p.values)))
        t = 1e-6 * scale / max(1.0, np.max(np.abs(dq)), np.max(np.abs(dp)))
        up = QPState(ScalarField(grid, st.q.values + t * dq), ScalarField(grid, st.p.values + t * dp), b)
        dn = QPState(ScalarField(grid, st.q.values - t * dq), ScalarField(grid, st.p.values - t * dp), b)
        fd = (eval_j(up, cfg).total - eval_j(dn, cfg).total) / (2.0 * t)
        worst = max(worst, abs(fd - analytic) / max(1.0, abs(analytic)))
    ok = worst <= 1e-4
    report("gradient exactness", ok, f"worst relative error {worst:.2e} <= 1e-4 over 20 pairs")


def test_convexity_probe(bench):
    """Second-order gaps stay nonnegative at the benchmark parameters."""
    cfg = CarlemanConfig()
    rep = convexity_probe(bench["ds19"], cfg, samples=100, amplitude=0.1, seed=0)
    ok = rep.summary["min_gap"] >= 0.0
    report(
        "convexity probe",
        ok,
        f"min gap {rep.summary['min_gap']:.3e} >= 0 over 100 pairs; "
        f"fraction >= alpha bound {rep.summary['frac_ge_alpha_bound']:.2f} (informational)",
    )


def test_initial_guess_independence(bench):
    """Three distinct feasible starts land on the same minimizer."""
    from ceit.transform import log_traces, qp_boundary, theta_derivative

    ds = bench["ds19"]
    cfg = CarlemanConfig()
    traces = log_traces(ds)
    dtraces = theta_derivative(traces, ds.ring)
    b = qp_boundary(traces, dtraces, ds.ring.angles[99], cfg.epsilon)
    grid = ds.grid
    opts = MinimizeOptions(max_iter=400, grad_tol=1e-12, grad_tol_abs=1e-8)

    from ceit.minimize import harmonic_extension

    starts = [initial_guess(b, grid)]
    plain = initial_guess(b, grid)  # both fields as plain harmonic extensions
    plain.q.values[:] = harmonic_extension(grid, b.q_dirichlet).values
    plain.p.values[:] = harmonic_extension(grid, b.p_dirichlet).values
    starts.append(plain)
    pert = initial_guess(b, grid)
    rng = np.random.default_rng(1)
    dq = sine_bump(grid, rng, 0.1)
    dpsi = sine_bump(grid, rng, 1.0)  # order-one shift of the log-potential
    pert.q.values[1:-1, 1:-1] += dq[1:-1, 1:-1]
    pert.p.values[1:-1, 1:-1] += (dq - cfg.epsilon * dpsi)[1:-1, 1:-1]
    starts.append(pert)

    finals = [minimize_j(s, cfg, opts).state for s in starts]
    h = grid.h

    def dist(a, c):
        num = math.sqrt(h2h_sq(a.q.values - c.q.values, h) + h2h_sq(a.p.values - c.p.values, h))
        den = max(
            math.sqrt(h2h_sq(a.q.values, h) + h2h_sq(a.p.values, h)),
            math.sqrt(h2h_sq(c.q.values, h) + h2h_sq(c.p.values, h)),
        )
        return num / den

    worst = max(dist(finals[i], finals[j]) for i in range(3) for j in range(i + 1, 3))
    ok = worst <= 1e-3
    report("initial-guess independence", ok, f"worst pairwise relative distance {worst:.2e} <= 1e-3")


def test_h_scaling(disk_case):
    """Finer coarse grid reconstructs the disk phantom more accurately."""
    cfg = CarlemanConfig()
    truth = disk_case["phantom"].sigma_true
    errs = {}
    for n in (9, 19):
        recon, _ = reconstruct_from_dataset(disk_case["datasets"][n], cfg, fine_n=126)
        diff = ScalarField(truth.grid, recon.sigma_fine.values - truth.values)
        errs[n] = norm_l2h(diff)
    ok = errs[19] < errs[9]
    report("h-scaling", ok, f"error(h=0.05)={errs[19]:.4f} < error(h=0.1)={errs[9]:.4f}")


def test_coarse_vs_fine_cost(disk_case):
    """The h=0.05 inversion runs at least three times faster than h=0.025."""
    cfg = CarlemanConfig()
    times = {}
    for n in (19, 39):
        t0 = time.perf_counter()
        reconstruct_from_dataset(disk_case["datasets"][n], cfg, fine_n=126)
        times[n] = time.perf_counter() - t0
    ok = times[19] <= times[39] / 3.0
    report(
        "coarse-vs-fine cost",
        ok,
        f"wall(h=0.05)={times[19]:.1f}s <= wall(h=0.025)/3={times[39] / 3.0:.1f}s "
        f"(ratio {times[39] / times[19]:.1f}x)",
    )


def test_quadrature_and_stencil_orders(bench):
    """Rectangle-rule and discrete-norm errors are first order; stencils second order."""
    domain = bench["domain"]

    def observed(errs):
        return float(np.mean([np.log2(errs[k] / errs[k + 1]) for k in range(len(errs) - 1)]))

    def f_smooth(x, y):
        return np.exp(0.3 * x + 0.2 * y)

    exact_int = (np.exp(0.6) - np.exp(0.3)) / 0.3 * (np.exp(0.4) - np.exp(0.2)) / 0.2
    q_errs, n_errs, s_errs = [], [], []
    from test_discrete import Poly2D, h2_norm_sq_exact

    poly = Poly2D([[0.3, -0.2, 0.11], [0.7, 0.25, -0.04], [-0.5, 0.12, 0.02]])
    exact_h2 = h2_norm_sq_exact(poly, domain.a - domain.c, domain.a + domain.c, domain.b - domain.c, domain.b + domain.c)
    for n in (9, 19, 39, 79):
        grid = build_grid(domain, n)
        f = ScalarField.from_function(grid, f_smooth)
        q_errs.append(abs(rect_quad(f) - exact_int))
        fp = ScalarField.from_function(grid, poly)
        from ceit.discrete import norm_h2h

        n_errs.append(abs(norm_h2h(fp) ** 2 - exact_h2))
        fs = ScalarField.from_function(grid, lambda x, y: np.sin(np.pi * x))
        d2 = fd_apply(fs, "d2x").values[1:-1, 1:-1]
        x, _ = grid.node_coords()
        s_errs.append(np.max(np.abs(d2 + np.pi**2 * np.sin(np.pi * x[1:-1, 1:-1]))))
    q_order = observed(q_errs)
    n_order = observed(n_errs)
    s_order = observed(s_errs)
    ok = 0.7 <= q_order <= 1.3 and 0.7 <= n_order <= 1.3 and 1.9 <= s_order <= 2.1
    report(
        "quadrature/norm convergence",
        ok,
        f"rect order {q_order:.2f} in [0.7,1.3]; norm order {n_order:.2f} in [0.7,1.3]; "
        f"stencil order {s_order:.2f} in [1.9,2.1]",
    )


def test_qrm_manufactured_solution(bench):
    """Recovered root-conductivity matches the manufactured bump to 1e-3."""
    grid = fine_grid(build_grid(bench["domain"], 19), 126)
    x, y = grid.node_coords()
    rho2 = ((x - 1.5) ** 2 + (y - 1.5) ** 2) / 0.09
    bump = np.where(rho2 < 1.0, np.exp(1.0 - 1.0 / np.maximum(1e-12, 1.0 - rho2)), 0.0)
    phi = 1.0 + 0.4 * bump
    lap = fd_apply(ScalarField(grid, phi), "laplacian").values
    r = np.zeros(grid.shape)
    r[1:-1, 1:-1] = lap[1:-1, 1:-1] / phi[1:-1, 1:-1]
    w = qrm_solve(ScalarField(grid, r))
    rel = norm_l2h(ScalarField(grid, w.values - phi)) / norm_l2h(ScalarField(grid, phi))
    ok = rel <= 1e-3
    report("QRM manufactured solution", ok, f"relative error {rel:.2e} <= 1e-3")


def test_carleman_diagnostic_table(bench):
    """Weighted ratio table exists, is finite, and is seed-deterministic."""
    grid = build_grid(bench["domain"], 19)
    a = carleman_diagnostic(8, [1, 2, 3, 4, 5], grid, seed=0)
    b = carleman_diagnostic(8, [1, 2, 3, 4, 5], grid, seed=0)
    finite = all(np.isfinite(v) and v > 0 for v in a.values())
    ok = finite and a == b and set(a) == {1.0, 2.0, 3.0, 4.0, 5.0}
    table = ", ".join(f"k={k:g}: {v:.3e}" for k, v in sorted(a.items()))
    report("Carleman diagnostic", ok, table)
