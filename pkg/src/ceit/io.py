"""File formats: field files, trace artifacts, graymaps, run manifests.

Field files and the boundary-trace artifact are little-endian binary with a
small self-describing header and round-trip bit-exactly. PGM (binary P5) is
the canonical image format; PNG output is a convenience wrapper around zlib.
"""

from __future__ import annotations

import hashlib
import json
import struct
import zlib
from pathlib import Path

import numpy as np

from ceit.discrete import ScalarField
from ceit.errors import ConfigError
from ceit.forward import BoundaryDataset
from ceit.geometry import DomainSpec, GridSpec, SourceRing

FIELD_MAGIC = b"CEITFLD1"
TRACE_MAGIC = b"CEITBND1"


# --- field files -----------------------------------------------------------------


def write_field(path: str | Path, f: ScalarField) -> None:
    g = f.grid
    with open(path, "wb") as fh:
        fh.write(FIELD_MAGIC)
        fh.write(struct.pack("<Iddd", g.n, g.h, g.origin[0], g.origin[1]))
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())


def read_field(path: str | Path) -> ScalarField:
    raw = Path(path).read_bytes()
    if raw[:8] != FIELD_MAGIC:
        raise ConfigError(f"{path}: not a field file")
    n, h, ox, oy = struct.unpack_from("<Iddd", raw, 8)
    vals = np.frombuffer(raw, dtype="<f8", offset=8 + struct.calcsize("<Iddd"))
    grid = GridSpec(n=int(n), h=float(h), origin=(float(ox), float(oy)))
    return ScalarField(grid, vals.reshape(grid.shape).copy())


# --- boundary dataset artifact ------------------------------------------------------


def write_boundary_dataset(path: str | Path, ds: BoundaryDataset) -> None:
    header = {
        "domain": vars(ds.domain),
        "grid": {"n": ds.grid.n, "h": ds.grid.h, "origin": list(ds.grid.origin)},
        "ring": {"count": ds.ring.count, "rho_theta": ds.ring.rho_theta},
        "angle_indices": [int(i) for i in ds.angle_indices],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(TRACE_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(ds.h0, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(ds.h1, dtype="<f8").tobytes())


def read_boundary_dataset(path: str | Path) -> BoundaryDataset:
    raw = Path(path).read_bytes()
    if raw[:8] != TRACE_MAGIC:
        raise ConfigError(f"{path}: not a boundary dataset file")
    (blob_len,) = struct.unpack_from("<I", raw, 8)
    header = json.loads(raw[12 : 12 + blob_len].decode())
    domain = DomainSpec(**header["domain"])
    grid = GridSpec(
        n=int(header["grid"]["n"]),
        h=float(header["grid"]["h"]),
        origin=tuple(header["grid"]["origin"]),
    )
    ring = SourceRing(count=int(header["ring"]["count"]), rho_theta=float(header["ring"]["rho_theta"]))
    idx = np.asarray(header["angle_indices"], dtype=int)
    m = len(idx)
    nb, ng = 4 * grid.n + 8, grid.n + 2
    off = 12 + blob_len
    h0 = np.frombuffer(raw, dtype="<f8", offset=off, count=m * nb).reshape(m, nb).copy()
    off += m * nb * 8
    h1 = np.frombuffer(raw, dtype="<f8", offset=off, count=m * ng).reshape(m, ng).copy()
    return BoundaryDataset(domain, grid, ring, idx, h0, h1)


# --- graymaps -------------------------------------------------------------------------


def write_pgm(path: str | Path, img: np.ndarray) -> None:
    """Binary 8-bit graymap; rows are the image's first axis."""
    img = np.asarray(img)
    if img.dtype != np.uint8 or img.ndim != 2:
        raise ValueError("PGM writer expects a 2-D uint8 array")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        fh.write(img.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if not raw.startswith(b"P5"):
        raise ConfigError(f"{path}: not a binary PGM")
    fields: list[bytes] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    w, h, maxv = (int(x) for x in fields)
    if maxv != 255:
        raise ConfigError(f"{path}: only maxval 255 supported")
    pos += 1
    return np.frombuffer(raw, dtype=np.uint8, offset=pos, count=w * h).reshape(h, w).copy()


def write_png(path: str | Path, img: np.ndarray) -> None:
    """Minimal grayscale 8-bit PNG encoder (convenience output)."""
    img = np.asarray(img)
    if img.dtype != np.uint8 or img.ndim != 2:
        raise ValueError("PNG writer expects a 2-D uint8 array")
    height, width = img.shape

    def chunk(tag: bytes, payload: bytes) -> bytes:
        return (
            struct.pack(">I", len(payload))
            + tag
            + payload
            + struct.pack(">I", zlib.crc32(tag + payload) & 0xFFFFFFFF)
        )

    ihdr = struct.pack(">IIBBBBB", width, height, 8, 0, 0, 0, 0)
    scanlines = b"".join(b"\x00" + img[r].tobytes() for r in range(height))
    data = zlib.compress(scanlines, 9)
    png = b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", ihdr) + chunk(b"IDAT", data) + chunk(b"IEND", b"")
    Path(path).write_bytes(png)


# --- run manifests ------------------------------------------------------------------


def sha256_of(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(run_dir: str | Path, extra: dict | None = None) -> Path:
    """List every artifact in the run directory with its content hash."""
    run_dir = Path(run_dir)
    entries = []
    for p in sorted(run_dir.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            entries.append({"path": str(p.relative_to(run_dir)), "sha256": sha256_of(p)})
    manifest = {"artifacts": entries}
    if extra:
        manifest.update(extra)
    out = run_dir / "manifest.json"
    out.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out
