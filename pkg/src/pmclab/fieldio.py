"""File formats for fields and reports.

Scalar fields dump to CSV (x, y, value) and to 16-bit binary PGM with an
affine value scaling recorded in a JSON sidecar; vector fields to CSV with
two value columns.  All floating-point text output uses 9 significant
digits.  Report dictionaries serialize to JSON with sorted keys and floats
rounded through the same 9-digit format, so identical runs produce identical
bytes.
"""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path

import numpy as np

from .grid import Array, Grid, ScalarField, VectorField

FLOAT_FMT = "%.9g"


def _fmt(x: float) -> str:
    return FLOAT_FMT % float(x)


def write_scalar_csv(path: Path, field: ScalarField) -> None:
    grid = field.grid
    x, y = grid.cell_centers()
    with open(path, "w") as f:
        f.write("x,y,value\n")
        for i in range(grid.nx):
            for j in range(grid.ny):
                f.write(f"{_fmt(x[i, j])},{_fmt(y[i, j])},{_fmt(field.values[i, j])}\n")


def write_vector_csv(path: Path, field: VectorField) -> None:
    grid = field.grid
    x, y = grid.cell_centers()
    with open(path, "w") as f:
        f.write("x,y,vx,vy\n")
        for i in range(grid.nx):
            for j in range(grid.ny):
                f.write(
                    f"{_fmt(x[i, j])},{_fmt(y[i, j])},"
                    f"{_fmt(field.values[0, i, j])},{_fmt(field.values[1, i, j])}\n"
                )


def write_pgm(path: Path, field: ScalarField | Array, grid: Grid | None = None) -> None:
    """16-bit binary PGM (big-endian), row 0 at the top (largest y).

    The affine map pixel -> value is stored in a JSON sidecar next to the
    image: value = vmin + pixel * (vmax - vmin) / 65535.
    """
    if isinstance(field, ScalarField):
        grid = field.grid
        values = field.values
    else:
        values = np.asarray(field, dtype=float)
        if grid is None:
            raise ValueError("grid required for raw arrays")
    vmin = float(values.min())
    vmax = float(values.max())
    span = vmax - vmin
    if span <= 0:
        pix = np.zeros(values.shape, dtype=np.uint16)
    else:
        pix = np.round((values - vmin) / span * 65535.0).astype(np.uint16)
    # array axis 0 is x; PGM rows run top to bottom, so transpose and flip y
    img = pix.T[::-1, :]
    with open(path, "wb") as f:
        f.write(f"P5\n{img.shape[1]} {img.shape[0]}\n65535\n".encode())
        f.write(img.astype(">u2").tobytes())
    sidecar = {
        "vmin": round_floats(vmin),
        "vmax": round_floats(vmax),
        "scale": round_floats(span / 65535.0 if span > 0 else 0.0),
        "orientation": "row 0 corresponds to the largest y; columns run along x",
        "grid": {"nx": grid.nx, "ny": grid.ny, "h": round_floats(grid.h),
                 "origin": [round_floats(grid.origin[0]), round_floats(grid.origin[1])]},
    }
    Path(str(path) + ".json").write_text(json.dumps(sidecar, sort_keys=True, indent=1))


def read_pgm(path: Path) -> tuple[Array, dict]:
    """Read a 16-bit PGM written by :func:`write_pgm`, returning (values, sidecar)."""
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM file")
    w, h = map(int, parts[1].split())
    maxval = int(parts[2])
    img = np.frombuffer(parts[3], dtype=">u2").reshape(h, w).astype(float)
    sidecar = json.loads(Path(str(path) + ".json").read_text())
    values = sidecar["vmin"] + img * sidecar["scale"]
    # undo the orientation: back to values[i, j] with i along x
    return values[::-1, :].T, sidecar


def round_floats(obj):
    """Round all floats in a JSON-like structure through the 9-digit format."""
    if isinstance(obj, float):
        if math.isfinite(obj):
            return float(FLOAT_FMT % obj)
        return None
    if isinstance(obj, dict):
        return {k: round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [round_floats(v) for v in obj]
    if isinstance(obj, (np.floating,)):
        return round_floats(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return round_floats(obj.tolist())
    return obj


def write_report(path: Path, report: dict) -> None:
    Path(path).write_text(json.dumps(round_floats(report), sort_keys=True, indent=1) + "\n")


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    digest.update(Path(path).read_bytes())
    return digest.hexdigest()


def write_trace_csv(path: Path, trace) -> None:
    with open(path, "w") as f:
        headers = ",".join(f"value_eps{k}" for k in range(len(trace.eps_levels)))
        f.write(f"x,y,length,{headers},extrapolated\n")
        for arc in trace.arcs:
            vals = ",".join(_fmt(v) for v in arc.values)
            f.write(
                f"{_fmt(arc.midpoint[0])},{_fmt(arc.midpoint[1])},{_fmt(arc.length)},"
                f"{vals},{_fmt(arc.extrapolated)}\n"
            )


def write_density_csv(path: Path, profile) -> None:
    with open(path, "w") as f:
        f.write("r,bad_ratio,frame_ratio\n")
        for r, b, m in zip(profile.radii, profile.bad_ratios, profile.frame_ratios):
            f.write(f"{_fmt(r)},{_fmt(b)},{_fmt(m)}\n")


def write_ladder_csv(path: Path, result) -> None:
    """Ladder trajectory of an extremal solve: t, energy, residual, shift, distance."""
    with open(path, "w") as f:
        f.write("t,energy,residual,median_shift,epi_distance\n")
        for k, lv in enumerate(result.levels):
            epi = result.epi_distances[k - 1] if k >= 1 else float("nan")
            f.write(
                f"{_fmt(lv.t)},{_fmt(lv.report.final_energy)},{_fmt(lv.report.residual)},"
                f"{_fmt(lv.median_shift)},{_fmt(epi)}\n"
            )
