import math
from collections import Counter

import numpy as np
import pytest

from ceit.errors import DataIntegrityError, GeometryError
from ceit.forward import (
    MeshField,
    _PointLocator,
    assemble_load,
    assemble_stiffness,
    extract_traces,
    forward_sweep,
    greens_disk,
    mollifier,
    mollifier_constant,
    solve_forward,
    triangulate_disk,
)
from ceit.geometry import build_grid


# --- mesh --------------------------------------------------------------------


def test_mesh_area_and_quality(mesh20, domain):
    areas = mesh20.signed_areas()
    assert np.all(areas > 0)
    assert abs(areas.sum() - math.pi * domain.D**2) < 0.01 * math.pi * domain.D**2
    assert mesh20.edge_lengths().max() <= 1.5 * mesh20.target_edge


def test_mesh_boundary_vertices_on_circle(mesh20, domain):
    bv = mesh20.vertices[mesh20.boundary_flags]
    r = np.hypot(bv[:, 0] - domain.a, bv[:, 1] - domain.b)
    assert np.max(np.abs(r - domain.D)) <= 1e-9 * domain.D


def test_mesh_is_conforming(mesh20):
    edges = Counter()
    for tri in mesh20.triangles:
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            edges[(min(a, b), max(a, b))] += 1
    counts = np.array(list(edges.values()))
    assert set(counts) <= {1, 2}
    boundary_edges = sum(1 for c in edges.values() if c == 1)
    # boundary edges form exactly the outer polygon
    assert boundary_edges == int(mesh20.boundary_flags.sum())


def test_mesh_rejects_degenerate_edge(domain):
    with pytest.raises(GeometryError):
        triangulate_disk(domain, 4.0)
    with pytest.raises(GeometryError):
        triangulate_disk(domain, 0.0)


# --- mollifier ---------------------------------------------------------------


def test_mollifier_zero_outside_support(domain):
    x0 = np.array([domain.a + domain.B, domain.b])
    pts = x0 + np.array([[domain.xi, 0.0], [0.0, 1.3 * domain.xi], [2.0, 2.0]])
    assert np.all(mollifier(pts, x0, domain.xi) == 0.0)


def test_mollifier_center_value(domain):
    x0 = np.array([1.0, 2.0])
    val = mollifier(x0[None, :], x0, domain.xi)[0]
    assert val == pytest.approx(mollifier_constant(domain.xi))


def test_mollifier_integrates_to_one(domain):
    xi = domain.xi
    x0 = np.array([0.0, 0.0])
    m = 801
    g1 = np.linspace(-xi, xi, m)
    X, Y = np.meshgrid(g1, g1, indexing="ij")
    vals = mollifier(np.stack([X, Y], axis=-1), x0, xi)
    integral = vals.sum() * (g1[1] - g1[0]) ** 2
    assert integral == pytest.approx(1.0, abs=1e-3)


# --- forward solve ------------------------------------------------------------


@pytest.fixture(scope="module")
def v_theta_pi(mesh20, sigma_one_20, domain):
    x0 = domain.source_point(math.pi)
    return solve_forward(mesh20, sigma_one_20, x0, domain.xi)


def omega_probes(domain):
    t = np.linspace(0.15, 0.85, 5)
    xs = domain.a - domain.c + 2 * domain.c * t
    ys = domain.b - domain.c + 2 * domain.c * t[::-1]
    pts = np.stack(np.meshgrid(xs[:5], ys[:2], indexing="ij"), axis=-1).reshape(-1, 2)
    return pts[:10]


def interp_at(mesh, field, pts):
    loc = _PointLocator(mesh)
    out = np.empty(len(pts))
    for k, p in enumerate(pts):
        t, lam = loc.locate(p)
        out[k] = lam @ field.values[mesh.triangles[t]]
    return out


def test_forward_matches_disk_greens_function(v_theta_pi, mesh20, domain):
    pts = omega_probes(domain)
    got = interp_at(mesh20, v_theta_pi, pts)
    x0 = domain.source_point(math.pi)
    exact = greens_disk(pts, x0, domain.center, domain.D)
    rel = np.abs(got - exact) / np.abs(exact)
    assert np.max(rel) < 0.02


def test_forward_positive_in_square(v_theta_pi, mesh20, domain):
    inside = (
        (np.abs(mesh20.vertices[:, 0] - domain.a) <= domain.c + 1e-9)
        & (np.abs(mesh20.vertices[:, 1] - domain.b) <= domain.c + 1e-9)
    )
    assert v_theta_pi.values[inside].min() > 0.0


def test_forward_mesh_refinement_reduces_error(domain):
    x0 = domain.source_point(math.pi)
    pts = omega_probes(domain)
    errs = []
    for te in (1.0 / 10.0, 1.0 / 20.0):
        mesh = triangulate_disk(domain, te)
        sig = MeshField(mesh, np.ones(mesh.n_vertices))
        v = solve_forward(mesh, sig, x0, domain.xi)
        exact = greens_disk(pts, x0, domain.center, domain.D)
        errs.append(np.max(np.abs(interp_at(mesh, v, pts) - exact)))
    assert errs[1] < errs[0]


def test_forward_energy_identity(v_theta_pi, mesh20, sigma_one_20, domain):
    K = assemble_stiffness(mesh20, sigma_one_20)
    b = assemble_load(mesh20, domain.source_point(math.pi), domain.xi)
    v = v_theta_pi.values
    lhs = float(v @ (K @ v))
    rhs = float(v @ b)
    assert abs(lhs - rhs) <= 1e-6 * abs(rhs)


def test_forward_mirror_symmetry(mesh20, sigma_one_20, domain):
    th = math.pi / 3.0
    v_plus = solve_forward(mesh20, sigma_one_20, domain.source_point(th), domain.xi)
    v_minus = solve_forward(mesh20, sigma_one_20, domain.source_point(-th), domain.xi)
    t = np.linspace(0.2, 0.8, 4)
    xs = domain.a - domain.c + 2 * domain.c * t
    d = 0.31 * domain.c
    up = np.stack([xs, np.full_like(xs, domain.b + d)], axis=1)
    dn = np.stack([xs, np.full_like(xs, domain.b - d)], axis=1)
    a = interp_at(mesh20, v_plus, up)
    b = interp_at(mesh20, v_minus, dn)
    assert np.max(np.abs(a - b) / np.abs(a)) < 0.01


def test_forward_rejects_sigma_below_one(mesh20, domain):
    sig = MeshField(mesh20, np.full(mesh20.n_vertices, 0.5))
    with pytest.raises(DataIntegrityError):
        solve_forward(mesh20, sig, domain.source_point(math.pi), domain.xi)


# --- traces -------------------------------------------------------------------


def test_trace_lengths_and_positivity(mesh20, sigma_one_20, domain, ring):
    grid = build_grid(domain, 9)
    ds = forward_sweep(mesh20, sigma_one_20, domain, ring, [grid], angle_indices=[99])[0]
    n = grid.n
    assert ds.h0.shape == (1, 4 * n + 8)
    assert ds.h1.shape == (1, n + 2)
    assert np.all(ds.h0 > 0)


def test_trace_source_side_is_hotter(mesh20, sigma_one_20, domain, ring):
    # source at theta ~ 0 sits east of the square: east boundary sees larger voltage
    grid = build_grid(domain, 9)
    east_idx = ring.nearest_index(2 * math.pi) if False else 0  # theta_1 = rho, nearly east
    ds = forward_sweep(mesh20, sigma_one_20, domain, ring, [grid], angle_indices=[east_idx])[0]
    n = grid.n
    east = ds.h0[0, grid.east_slice]
    west = ds.h0[0, : n + 2]
    assert east.mean() > west.mean()
    # matches the closed-form oracle ordering as well
    x0 = domain.source_point(ring.angles[east_idx])
    pts_e = np.stack([np.full(n + 2, domain.a + domain.c), grid.ys()], axis=1)
    pts_w = np.stack([np.full(n + 2, domain.a - domain.c), grid.ys()], axis=1)
    ge = greens_disk(pts_e, x0, domain.center, domain.D)
    gw = greens_disk(pts_w, x0, domain.center, domain.D)
    assert ge.mean() > gw.mean()


def test_trace_h0_matches_greens_oracle(mesh20, sigma_one_20, domain, ring):
    grid = build_grid(domain, 9)
    ds = forward_sweep(mesh20, sigma_one_20, domain, ring, [grid], angle_indices=[99])[0]
    x0 = domain.source_point(ring.angles[99])
    bi, bj = grid.boundary_indices()
    pts = np.stack([grid.xs()[bi], grid.ys()[bj]], axis=1)
    exact = greens_disk(pts, x0, domain.center, domain.D)
    rel = np.abs(ds.h0[0] - exact) / np.abs(exact)
    assert np.max(rel) < 0.03


def test_trace_extraction_deterministic(mesh20, sigma_one_20, domain, ring):
    grid = build_grid(domain, 9)
    a = forward_sweep(mesh20, sigma_one_20, domain, ring, [grid], angle_indices=[99])[0]
    b = forward_sweep(mesh20, sigma_one_20, domain, ring, [grid], angle_indices=[99])[0]
    assert np.array_equal(a.h0, b.h0)
    assert np.array_equal(a.h1, b.h1)


def test_sweep_parallel_matches_serial(mesh20, sigma_one_20, domain, ring):
    grid = build_grid(domain, 9)
    idx = [98, 99, 100]
    ser = forward_sweep(mesh20, sigma_one_20, domain, ring, [grid], angle_indices=idx, jobs=1)[0]
    par = forward_sweep(mesh20, sigma_one_20, domain, ring, [grid], angle_indices=idx, jobs=2)[0]
    assert np.array_equal(ser.h0, par.h0)
    assert np.array_equal(ser.h1, par.h1)


def test_locator_rejects_point_outside(mesh20):
    from ceit.errors import MeshGeometryError

    loc = _PointLocator(mesh20)
    with pytest.raises(MeshGeometryError):
        loc.locate(np.array([100.0, 100.0]))
