"""Command-line pipeline driver.

Subcommands read a JSON run config (defaults cover the standard benchmark
geometry), write artifacts into a run directory, and finish by writing a
manifest listing every artifact with its content hash. Exit codes: 0 success,
2 configuration error, 3 numeric failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from ceit.carleman import CarlemanConfig
from ceit.discrete import ScalarField, norm_l2h
from ceit.errors import CeitError, ConfigError, GeometryError
from ceit.forward import MeshField, forward_sweep, triangulate_disk
from ceit.geometry import DomainSpec, GridSpec, SourceRing, build_domain, build_grid, source_angles
from ceit.io import (
    read_boundary_dataset,
    read_field,
    read_pgm,
    write_boundary_dataset,
    write_field,
    write_manifest,
    write_pgm,
    write_png,
)
from ceit.minimize import MinimizeOptions, write_iteration_log
from ceit.phantoms import (
    Phantom,
    disk_mask,
    glyph_mask,
    make_dataset,
    rasterize_phantom,
    sigma_to_bytes,
    write_dataset,
)
from ceit.recover import fine_grid, reconstruct_from_dataset
from ceit.verify import carleman_diagnostic, convexity_probe


@dataclass
class RunConfig:
    """Serializable record of one pipeline run; defaults are the benchmark values."""

    a: float = 1.5
    b: float = 1.5
    c: float = 0.5
    B: float = 2.0
    D: float = 3.0
    xi: float = 0.1
    ring_count: int = 199
    ring_rho: float = math.pi / 100.0
    grid_n: list[int] = field(default_factory=lambda: [19])
    mesh_edge: float = 1.0 / 40.0
    fine_n: int = 126
    kappa: float = 3.0
    alpha: float = 0.01
    epsilon: float = 2e-4
    lambda_neumann: float = 10.0
    A: float = 100.0
    f2_weight: float = 0.0
    psi_curvature_weight: float = 0.1
    alpha_centered: bool = True
    penalty_metric: str = "transformed"
    theta0: float | None = None  # None: ring angle nearest pi
    mode: str = "single-theta"
    angles: str | list[int] = "auto"  # "auto": only angles the mode needs
    max_iter: int = 200
    grad_tol: float = 1e-6
    phantom: str = "none"  # none | disk | glyphs
    phantom_count: int = 4
    disk_center: list[float] = field(default_factory=lambda: [0.5, 0.5])
    disk_radius: float = 0.18
    smooth_width: float = 2.0
    sigma_in: float = 2.0
    seed: int = 0
    jobs: int = 1

    def domain(self) -> DomainSpec:
        return build_domain(self.a, self.b, self.c, self.B, self.D, self.xi)

    def ring(self) -> SourceRing:
        return source_angles(self.ring_count, self.ring_rho)

    def grids(self) -> list[GridSpec]:
        return [build_grid(self.domain(), n) for n in self.grid_n]

    def carleman(self) -> CarlemanConfig:
        return CarlemanConfig(
            kappa=self.kappa,
            alpha=self.alpha,
            epsilon=self.epsilon,
            lambda_neumann=self.lambda_neumann,
            A=self.A,
            f2_weight=self.f2_weight,
            psi_curvature_weight=self.psi_curvature_weight,
            alpha_centered=self.alpha_centered,
            penalty_metric=self.penalty_metric,
        )

    def options(self) -> MinimizeOptions:
        return MinimizeOptions(max_iter=self.max_iter, grad_tol=self.grad_tol)


def load_config(path: str | None, overrides: dict) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"malformed config {path}: {e}") from e
        unknown = set(raw) - set(cfg.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        cfg = replace(cfg, **raw)
    for key, value in overrides.items():
        if value is not None:
            cfg = replace(cfg, **{key: value})
    cfg.grids()  # validate eagerly
    cfg.carleman()
    return cfg


def config_round_trip(cfg: RunConfig) -> RunConfig:
    return RunConfig(**json.loads(json.dumps(asdict(cfg))))


def _run_dir(out: str | None, tag: str) -> Path:
    if out:
        path = Path(out)
    else:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        path = Path("runs") / f"{stamp}-{tag}"
    path.mkdir(parents=True, exist_ok=True)
    return path


def _fine_grid(cfg: RunConfig) -> GridSpec:
    return fine_grid(cfg.grids()[0], cfg.fine_n)


def _phantoms(cfg: RunConfig) -> list[Phantom]:
    fg = _fine_grid(cfg)
    if cfg.phantom == "none":
        return []
    if cfg.phantom == "disk":
        mask = disk_mask(fg, tuple(cfg.disk_center), cfg.disk_radius)
        return [rasterize_phantom(mask, fg, cfg.smooth_width, cfg.sigma_in, "disk")]
    if cfg.phantom == "glyphs":
        rng = np.random.default_rng(cfg.seed)
        out = []
        for k in range(cfg.phantom_count):
            mask = glyph_mask(fg, rng)
            out.append(rasterize_phantom(mask, fg, cfg.smooth_width, cfg.sigma_in, f"{k:04d}"))
        return out
    raise ConfigError(f"unknown phantom kind {cfg.phantom!r}")


def sigma_on_mesh(mesh, phantom: Phantom | None) -> MeshField:
    """Conductivity on the forward mesh: phantom inside the square, one outside."""
    vals = np.ones(mesh.n_vertices)
    if phantom is not None:
        g = phantom.sigma_true.grid
        x = (mesh.vertices[:, 0] - g.origin[0]) / g.h
        y = (mesh.vertices[:, 1] - g.origin[1]) / g.h
        inside = (x >= 0) & (x <= g.n + 1) & (y >= 0) & (y <= g.n + 1)
        xi = np.clip(np.floor(x[inside]).astype(int), 0, g.n)
        yi = np.clip(np.floor(y[inside]).astype(int), 0, g.n)
        fx, fy = x[inside] - xi, y[inside] - yi
        v = phantom.sigma_true.values
        vals[inside] = (
            v[xi, yi] * (1 - fx) * (1 - fy)
            + v[xi + 1, yi] * fx * (1 - fy)
            + v[xi, yi + 1] * (1 - fx) * fy
            + v[xi + 1, yi + 1] * fx * fy
        )
    return MeshField(mesh, vals)


def needed_angle_indices(cfg: RunConfig) -> np.ndarray | None:
    """Angles the reconstruction actually consumes, or None for the full ring."""
    if cfg.angles == "all":
        return None
    if isinstance(cfg.angles, list):
        return np.asarray(cfg.angles, dtype=int)
    ring = cfg.ring()
    if cfg.mode == "averaged":
        return None
    theta0 = cfg.theta0 if cfg.theta0 is not None else math.pi
    k = ring.nearest_index(theta0)
    k = min(max(k, 1), ring.count - 2)
    return np.array([k - 1, k, k + 1])


def compute_traces(cfg: RunConfig, phantom: Phantom | None):
    mesh = triangulate_disk(cfg.domain(), cfg.mesh_edge)
    sigma = sigma_on_mesh(mesh, phantom)
    return forward_sweep(
        mesh,
        sigma,
        cfg.domain(),
        cfg.ring(),
        cfg.grids(),
        angle_indices=needed_angle_indices(cfg),
        jobs=cfg.jobs,
    )


# --- subcommands ---------------------------------------------------------------------


def cmd_gen_phantoms(cfg: RunConfig, out: str | None) -> int:
    run = _run_dir(out, "phantoms")
    for ph in _phantoms(cfg):
        case = run / f"phantom_{ph.id}"
        case.mkdir(parents=True, exist_ok=True)
        write_field(case / "sigma.ceitfld", ph.sigma_true)
        write_pgm(case / "sigma.pgm", sigma_to_bytes(ph.sigma_true.values, 1.0, cfg.sigma_in))
        meta = {"id": ph.id, "smooth_width": ph.smooth_width, "sigma_in": ph.sigma_in}
        (case / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    write_manifest(run, {"command": "gen-phantoms", "config": asdict(cfg)})
    print(f"phantoms written to {run}")
    return 0


def cmd_forward(cfg: RunConfig, out: str | None) -> int:
    run = _run_dir(out, "forward")
    phantoms = _phantoms(cfg)
    phantom = phantoms[0] if phantoms else None
    datasets = compute_traces(cfg, phantom)
    for ds in datasets:
        write_boundary_dataset(run / f"traces_n{ds.grid.n}.ceitbnd", ds)
    write_manifest(run, {"command": "forward", "config": asdict(cfg)})
    print(f"boundary data written to {run}")
    return 0


def _render_panel(values: np.ndarray, lo: float, hi: float) -> np.ndarray:
    scaled = np.clip((values - lo) / (hi - lo), 0.0, 1.0)
    return np.round(255.0 * scaled).astype(np.uint8)


def render_panels(
    out_path_base: Path,
    coarse: np.ndarray,
    truth: np.ndarray | None,
    refined: np.ndarray | None,
    lo: float = 1.0,
    hi: float = 2.0,
) -> None:
    """Side-by-side graymap: coarse | refined (when present) | truth (when present)."""
    panels = [_render_panel(coarse, lo, hi)]
    if refined is not None:
        panels.append(_render_panel(refined, lo, hi))
    if truth is not None:
        panels.append(_render_panel(truth, lo, hi))
    gap = np.full((panels[0].shape[0], 2), 255, dtype=np.uint8)
    row = panels[0]
    for p in panels[1:]:
        row = np.concatenate([row, gap, p], axis=1)
    write_pgm(out_path_base.with_suffix(".pgm"), row)
    write_png(out_path_base.with_suffix(".png"), row)


def cmd_reconstruct(cfg: RunConfig, out: str | None, traces_path: str | None) -> int:
    run = _run_dir(out, "reconstruct")
    phantoms = _phantoms(cfg)
    phantom = phantoms[0] if phantoms else None
    if traces_path:
        datasets = [read_boundary_dataset(traces_path)]
    else:
        datasets = compute_traces(cfg, phantom)
    summary = []
    for ds in datasets:
        recon, reports = reconstruct_from_dataset(
            ds, cfg.carleman(), theta0=cfg.theta0, mode=cfg.mode,
            fine_n=cfg.fine_n, opts=cfg.options(),
        )
        tag = f"n{ds.grid.n}"
        write_field(run / f"r_coarse_{tag}.ceitfld", recon.r_coarse)
        write_field(run / f"r_fine_{tag}.ceitfld", recon.r_fine)
        write_field(run / f"w_fine_{tag}.ceitfld", recon.w_fine)
        write_field(run / f"sigma_fine_{tag}.ceitfld", recon.sigma_fine)
        (run / f"provenance_{tag}.json").write_text(
            json.dumps(recon.provenance, indent=2, sort_keys=True, default=float) + "\n"
        )
        write_iteration_log(reports[0], run / f"iterations_{tag}.csv")
        truth = phantom.sigma_true.values if phantom is not None else None
        render_panels(run / f"panels_{tag}", recon.sigma_fine.values, truth, None, 1.0, cfg.sigma_in)
        row = {"n": ds.grid.n, "h": ds.grid.h, "j_final": reports[0].j_history[-1]}
        if truth is not None:
            diff = ScalarField(recon.sigma_fine.grid, recon.sigma_fine.values - truth)
            row["error_l2h"] = norm_l2h(diff)
        summary.append(row)
    (run / "summary.json").write_text(json.dumps(summary, indent=2, default=float) + "\n")
    write_manifest(run, {"command": "reconstruct", "config": asdict(cfg)})
    print(f"reconstruction written to {run}")
    return 0


def cmd_verify(cfg: RunConfig, out: str | None, samples: int, amplitude: float) -> int:
    run = _run_dir(out, "verify")
    datasets = compute_traces(cfg, None)
    report = convexity_probe(
        datasets[0], cfg.carleman(), samples=samples, amplitude=amplitude, seed=cfg.seed
    )
    with open(run / "convexity_records.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["gap", "alpha_form", "neumann_form", "f_gap"])
        writer.writeheader()
        writer.writerows(report.records)
    diag = carleman_diagnostic(samples, [1, 2, 3, 4, 5], datasets[0].grid, seed=cfg.seed)
    summary = {
        "convexity": report.summary,
        "convexity_config": report.config,
        "weighted_ratio_table": {f"{k:g}": v for k, v in diag.items()},
        "seed": cfg.seed,
    }
    (run / "verify_summary.json").write_text(json.dumps(summary, indent=2, default=float) + "\n")
    write_manifest(run, {"command": "verify", "config": asdict(cfg)})
    print(f"verification reports written to {run}")
    return 0


def cmd_dataset(cfg: RunConfig, out: str | None) -> int:
    run = _run_dir(out, "dataset")
    phantoms = _phantoms(cfg)
    if not phantoms:
        raise ConfigError("dataset generation needs phantom != 'none'")
    mesh = triangulate_disk(cfg.domain(), cfg.mesh_edge)
    recons = []
    for ph in phantoms:
        sigma = sigma_on_mesh(mesh, ph)
        ds = forward_sweep(
            mesh, sigma, cfg.domain(), cfg.ring(), cfg.grids()[:1],
            angle_indices=needed_angle_indices(cfg), jobs=cfg.jobs,
        )[0]
        recon, _ = reconstruct_from_dataset(
            ds, cfg.carleman(), theta0=cfg.theta0, mode=cfg.mode,
            fine_n=cfg.fine_n, opts=cfg.options(),
        )
        recons.append(recon.sigma_fine)
    ps = make_dataset(phantoms, recons, split_seed=cfg.seed)
    write_dataset(ps, run, 1.0, cfg.sigma_in)
    write_manifest(run, {"command": "dataset", "config": asdict(cfg)})
    print(f"paired dataset written to {run}")
    return 0


def cmd_render(out: str | None, fields: list[str], truth: str | None, refined: str | None) -> int:
    run = _run_dir(out, "render")
    truth_vals = read_field(truth).values if truth else None
    refined_vals = None
    if refined:
        refined_vals = (
            read_field(refined).values
            if refined.endswith(".ceitfld")
            else 1.0 + read_pgm(refined).astype(float) / 255.0
        )
    for fpath in fields:
        f = read_field(fpath)
        base = run / (Path(fpath).stem + "_panels")
        render_panels(base, f.values, truth_vals, refined_vals)
    write_manifest(run, {"command": "render"})
    print(f"renders written to {run}")
    return 0


# --- argument wiring --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ceit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="run-config JSON path")
        p.add_argument("--out", help="output run directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--grid-n", type=int, default=None, help="interior points per side")
        p.add_argument("--theta0", type=float, default=None, help="run angle in radians")
        p.add_argument("--mode", choices=["single-theta", "averaged"], default=None)
        p.add_argument("--jobs", type=int, default=None)

    for name in ("gen-phantoms", "forward", "reconstruct", "verify", "dataset"):
        p = sub.add_parser(name)
        common(p)
        if name == "reconstruct":
            p.add_argument("--traces", help="existing boundary-data artifact")
        if name == "verify":
            p.add_argument("--samples", type=int, default=100)
            p.add_argument("--amplitude", type=float, default=0.1)

    p = sub.add_parser("render")
    p.add_argument("fields", nargs="+", help="field files to render")
    p.add_argument("--out")
    p.add_argument("--truth", help="truth field file")
    p.add_argument("--refined", help="refined field or PGM")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "render":
            return cmd_render(args.out, args.fields, args.truth, args.refined)
        overrides = {
            "seed": args.seed,
            "theta0": args.theta0,
            "mode": args.mode,
            "jobs": args.jobs,
        }
        if args.grid_n is not None:
            overrides["grid_n"] = [args.grid_n]
        env_jobs = os.environ.get("CEIT_JOBS")
        if env_jobs is not None:
            overrides["jobs"] = int(env_jobs)
        cfg = load_config(args.config, overrides)
        if args.command == "gen-phantoms":
            return cmd_gen_phantoms(cfg, args.out)
        if args.command == "forward":
            return cmd_forward(cfg, args.out)
        if args.command == "reconstruct":
            return cmd_reconstruct(cfg, args.out, args.traces)
        if args.command == "verify":
            return cmd_verify(cfg, args.out, args.samples, args.amplitude)
        if args.command == "dataset":
            return cmd_dataset(cfg, args.out)
        raise ConfigError(f"unknown command {args.command}")
    except (ConfigError, GeometryError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except CeitError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
