"""Ground-truth conductivity phantoms and paired dataset assembly.

Phantoms are glyph-style binary masks on the fine grid, optionally smoothed by
a truncated Gaussian, mapped to conductivity 1 + mask * (sigma_in - 1). The
procedural generator draws stroke skeletons (segments, hooks, dots) so the
shapes carry sharp corners and mixed stroke widths without any font assets.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ceit.discrete import ScalarField
from ceit.geometry import GridSpec

MARGIN_PX = 2


@dataclass(eq=False)
class Phantom:
    sigma_true: ScalarField
    mask: np.ndarray
    smooth_width: float
    id: str
    sigma_in: float = 2.0


@dataclass(eq=False)
class PhantomSet:
    items: list[tuple[Phantom, ScalarField]]
    split: dict[str, list[int]] = field(default_factory=dict)


def kernel_radius(width: float) -> int:
    """Support radius of the truncated smoothing kernel in pixels."""
    return 0 if width <= 0.0 else max(1, int(np.ceil(2.0 * width)))


def _gaussian_kernel(width: float) -> np.ndarray:
    """Truncated 1-D Gaussian, radius 2*width pixels, unit sum."""
    radius = kernel_radius(width)
    t = np.arange(-radius, radius + 1, dtype=float)
    k = np.exp(-0.5 * (t / width) ** 2)
    return k / k.sum()


def _smooth_mask(mask: np.ndarray, width: float) -> np.ndarray:
    if width <= 0.0:
        return mask.astype(float)
    k = _gaussian_kernel(width)
    out = mask.astype(float)
    out = np.apply_along_axis(lambda r: np.convolve(r, k, mode="same"), 0, out)
    out = np.apply_along_axis(lambda r: np.convolve(r, k, mode="same"), 1, out)
    return np.clip(out, 0.0, 1.0)


def rasterize_phantom(
    mask: np.ndarray,
    grid: GridSpec,
    smooth_width: float = 1.0,
    sigma_in: float = 2.0,
    phantom_id: str = "phantom",
) -> Phantom:
    """Conductivity field 1 + smoothed_mask * (sigma_in - 1) on the fine grid.

    The mask must keep a 2-pixel margin of background so the conductivity is
    exactly one along the square's boundary band.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != grid.shape:
        raise ValueError(f"mask shape {mask.shape} does not match grid {grid.shape}")
    # clearance must cover the smoothing support so the conductivity stays
    # exactly one on the 2-pixel boundary band
    m = MARGIN_PX + kernel_radius(smooth_width)
    if mask[:m, :].any() or mask[-m:, :].any() or mask[:, :m].any() or mask[:, -m:].any():
        raise ValueError(f"mask touches the {m}-pixel background margin")
    sm = _smooth_mask(mask, smooth_width)
    sigma = 1.0 + sm * (sigma_in - 1.0)
    return Phantom(
        sigma_true=ScalarField(grid, sigma),
        mask=mask,
        smooth_width=float(smooth_width),
        id=str(phantom_id),
        sigma_in=float(sigma_in),
    )


# --- procedural glyph strokes --------------------------------------------------


def _dist_to_segment(px, py, a, b):
    ax, ay = a
    bx, by = b
    vx, vy = bx - ax, by - ay
    denom = vx * vx + vy * vy
    if denom == 0.0:
        return np.hypot(px - ax, py - ay)
    t = np.clip(((px - ax) * vx + (py - ay) * vy) / denom, 0.0, 1.0)
    return np.hypot(px - (ax + t * vx), py - (ay + t * vy))


def glyph_mask(grid: GridSpec, rng: np.random.Generator) -> np.ndarray:
    """Random stroke figure: straight strokes, an optional hook arc, dots."""
    N = grid.n + 2
    ii, jj = np.meshgrid(np.arange(N, dtype=float), np.arange(N, dtype=float), indexing="ij")
    lo, hi = MARGIN_PX + 4, N - MARGIN_PX - 5
    mask = np.zeros((N, N), dtype=bool)

    def rand_pt():
        return rng.uniform(lo, hi), rng.uniform(lo, hi)

    n_strokes = int(rng.integers(2, 6))
    for _ in range(n_strokes):
        a, b = rand_pt(), rand_pt()
        width = rng.uniform(0.02, 0.06) * N
        mask |= _dist_to_segment(ii, jj, a, b) <= width

    if rng.random() < 0.5:  # hook: circular arc segment
        cx, cy = rand_pt()
        rad = rng.uniform(0.08, 0.2) * N
        a0 = rng.uniform(0, 2 * np.pi)
        a1 = a0 + rng.uniform(0.25, 0.75) * 2 * np.pi
        ang = np.arctan2(jj - cy, ii - cx)
        span = (ang - a0) % (2 * np.pi) <= (a1 - a0) % (2 * np.pi)
        ring = np.abs(np.hypot(ii - cx, jj - cy) - rad) <= rng.uniform(0.015, 0.04) * N
        mask |= ring & span

    for _ in range(int(rng.integers(0, 3))):  # dots
        cx, cy = rand_pt()
        mask |= np.hypot(ii - cx, jj - cy) <= rng.uniform(0.02, 0.05) * N

    # clip anything that crept toward the margin (arc spans can overshoot);
    # leave room for smoothing widths up to two pixels
    m = MARGIN_PX + 4
    mask[:m, :] = False
    mask[-m:, :] = False
    mask[:, :m] = False
    mask[:, -m:] = False
    return mask


def disk_mask(grid: GridSpec, center_frac=(0.5, 0.5), radius_frac=0.18) -> np.ndarray:
    """Disk inclusion mask, sized as a fraction of the square's side."""
    N = grid.n + 2
    ii, jj = np.meshgrid(np.arange(N, dtype=float), np.arange(N, dtype=float), indexing="ij")
    cx, cy = center_frac[0] * (N - 1), center_frac[1] * (N - 1)
    return np.hypot(ii - cx, jj - cy) <= radius_frac * (N - 1)


def split_counts(n: int) -> tuple[int, int, int]:
    """80/10/10 split sizes: nearest-integer tenths, remainder to train."""
    n_val = round(0.1 * n)
    n_test = round(0.1 * n)
    return n - n_val - n_test, n_val, n_test


def make_dataset(
    phantoms: list[Phantom],
    reconstructions: list[ScalarField],
    split_seed: int,
) -> PhantomSet:
    """Pair phantoms with reconstructions and split deterministically by seed."""
    if len(phantoms) != len(reconstructions):
        raise ValueError(
            f"phantom/reconstruction length mismatch: {len(phantoms)} vs {len(reconstructions)}"
        )
    n = len(phantoms)
    n_train, n_val, n_test = split_counts(n)
    order = np.random.default_rng(split_seed).permutation(n)
    split = {
        "train": sorted(int(i) for i in order[:n_train]),
        "val": sorted(int(i) for i in order[n_train : n_train + n_val]),
        "test": sorted(int(i) for i in order[n_train + n_val :]),
    }
    return PhantomSet(items=list(zip(phantoms, reconstructions)), split=split)


def write_dataset(ps: PhantomSet, root: str | Path, sigma_lo=1.0, sigma_hi=2.0) -> None:
    """Directory layout consumed by the refiner.

    root/{train,val,test}/case_<id>/{input.pgm, target.pgm, meta.json}; images
    are 8-bit binary graymaps mapping conductivity [lo, hi] -> [0, 255].
    """
    from ceit.io import write_pgm

    root = Path(root)
    for name, idxs in ps.split.items():
        for i in idxs:
            phantom, recon = ps.items[i]
            case = root / name / f"case_{phantom.id}"
            case.mkdir(parents=True, exist_ok=True)
            write_pgm(case / "input.pgm", sigma_to_bytes(recon.values, sigma_lo, sigma_hi))
            write_pgm(case / "target.pgm", sigma_to_bytes(phantom.sigma_true.values, sigma_lo, sigma_hi))
            meta = {
                "id": phantom.id,
                "smooth_width": phantom.smooth_width,
                "sigma_in": phantom.sigma_in,
                "sigma_range": [sigma_lo, sigma_hi],
                "shape": list(recon.values.shape),
            }
            (case / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def sigma_to_bytes(values: np.ndarray, lo=1.0, hi=2.0) -> np.ndarray:
    scaled = np.clip((values - lo) / (hi - lo), 0.0, 1.0)
    return np.round(scaled * 255.0).astype(np.uint8)


def bytes_to_sigma(img: np.ndarray, lo=1.0, hi=2.0) -> np.ndarray:
    return lo + img.astype(float) / 255.0 * (hi - lo)
