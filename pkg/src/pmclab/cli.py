"""Scenario runner: file-driven, reproducible experiment harness.

A scenario config (JSON) names a domain, a grid, a curvature, a task, and
task parameters; ``pmc-lab run`` executes it into an output directory with a
manifest (inputs, versions, timings, emitted files with content hashes),
JSON reports, and CSV/PGM field dumps.  Identical config and seed reproduce
identical report bytes.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
import traceback
from pathlib import Path

import numpy as np

from . import __version__
from .domains import AnalyticDomain, DiskWithHoles, domain_from_dict, domain_to_dict
from .extremality import (
    CurvatureSpec,
    cheeger,
    classify,
    normalized_extremal_curvature,
    total_curvature,
)
from .fieldio import (
    read_pgm,
    round_floats,
    sha256_file,
    write_density_csv,
    write_ladder_csv,
    write_pgm,
    write_report,
    write_scalar_csv,
    write_trace_csv,
    write_vector_csv,
)
from .geometry import (
    DomainMask,
    area,
    build_ladder,
    inner_minkowski_content,
    perimeter,
    rasterize,
    super_reduced_test,
)
from .grid import Grid, ScalarField, VectorField
from .solver import (
    SolveConfig,
    median_normalize,
    solve_dirichlet,
    solve_extremal,
    tu_field,
    uniqueness_probe,
)
from .traces import (
    DivField,
    bad_set_density,
    boundary_layer_flux,
    gauss_green_residual,
    twisting_field,
    verticality_flux,
    weak_normal_trace,
)

log = logging.getLogger("pmclab")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DOMAIN = 3
EXIT_TASK = 4

TASKS = ("classify", "cheeger", "solve", "trace", "verticality", "stability", "superreduced")


class ConfigError(ValueError):
    pass


class DomainBuildError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Config parsing
# ---------------------------------------------------------------------------


def load_config(path: Path) -> dict:
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be an object")
    task = cfg.get("task")
    if task not in TASKS:
        raise ConfigError(f"task must be one of {TASKS}, got {task!r}")
    for key in ("domain", "grid"):
        if key not in cfg:
            raise ConfigError(f"config missing required key {key!r}")
    ref = cfg["domain"].get("mask_pgm")
    if ref is not None and not Path(ref).exists():
        raise ConfigError(f"referenced mask file does not exist: {ref}")
    return cfg


def build_grid(grid_spec: dict, dom: AnalyticDomain | None) -> Grid:
    if "nx" in grid_spec:
        return Grid(
            int(grid_spec["nx"]),
            int(grid_spec["ny"]),
            float(grid_spec["h"]),
            tuple(grid_spec.get("origin", (0.0, 0.0))),
        )
    if dom is None:
        raise ConfigError("resolution-style grid spec needs an analytic domain")
    xmin, xmax, ymin, ymax = dom.bbox
    cx, cy = 0.5 * (xmin + xmax), 0.5 * (ymin + ymax)
    side = max(xmax - xmin, ymax - ymin)
    if "resolution" in grid_spec:
        n = int(grid_spec["resolution"])
        pad = float(grid_spec.get("padding", 0.05))
        box = side * (1.0 + 2.0 * pad)
        return Grid(n, n, box / n, (cx - box / 2, cy - box / 2))
    if "h" in grid_spec:
        h = float(grid_spec["h"])
        m = int(grid_spec.get("margin_cells", 8))
        n = int(np.ceil(side / h)) + 2 * m
        if n % 2:
            n += 1
        box = n * h
        return Grid(n, n, h, (cx - box / 2, cy - box / 2))
    raise ConfigError("grid spec needs nx/ny/h, resolution, or h/margin_cells")


def build_domain(cfg: dict) -> tuple[AnalyticDomain | None, Grid, DomainMask]:
    spec = cfg["domain"]
    try:
        if "mask_pgm" in spec:
            values, sidecar = read_pgm(Path(spec["mask_pgm"]))
            gspec = sidecar["grid"]
            grid = Grid(gspec["nx"], gspec["ny"], gspec["h"], tuple(gspec["origin"]))
            mask = DomainMask(grid, values > 0.5)
            return None, grid, mask
        dom = domain_from_dict(spec)
        grid = build_grid(cfg["grid"], dom)
        mask = rasterize(dom, grid)
        return dom, grid, mask
    except ConfigError:
        raise
    except Exception as exc:
        raise DomainBuildError(str(exc)) from exc


def build_curvature(cfg: dict, mask: DomainMask) -> tuple[CurvatureSpec, dict]:
    spec = cfg.get("curvature", {"constant": 0.0})
    if spec.get("normalized"):
        rep = normalized_extremal_curvature(mask, with_margin=False)
        return rep.curvature, {"normalized": True, "value": rep.value}
    if "constant" in spec:
        return CurvatureSpec(constant=float(spec["constant"])), {"constant": spec["constant"]}
    raise ConfigError("curvature spec needs 'constant' or 'normalized'")


# ---------------------------------------------------------------------------
# Task pipelines
# ---------------------------------------------------------------------------


def _solver_config(params: dict) -> SolveConfig:
    return SolveConfig.from_dict(params.get("solver", {}))


def task_classify(cfg, dom, mask, out: Path) -> dict:
    spec, curv_info = build_curvature(cfg, mask)
    with_margin = bool(cfg.get("params", {}).get("margin", True))
    cls = classify(mask, spec, with_margin=with_margin)
    report = {
        "classification": cls.label,
        "epsilon0": cls.epsilon0,
        "total_curvature": cls.total_curvature,
        "perimeter": cls.perimeter,
        "tolerance": cls.tol,
        "curvature": curv_info,
    }
    write_report(out / "classify.json", report)
    return report


def task_cheeger(cfg, dom, mask, out: Path) -> dict:
    res = cheeger(mask)
    report = {
        "cheeger_constant": res.value,
        "bracket": list(res.bracket),
        "set_quotient": res.quotient,
        "iterations": res.iterations,
    }
    write_report(out / "cheeger.json", report)
    write_pgm(out / "cheeger_set.pgm", res.cheeger_inside.astype(float), mask.grid)
    return report


def _run_solve(cfg, mask):
    spec, curv_info = build_curvature(cfg, mask)
    params = cfg.get("params", {})
    scfg = _solver_config(params)
    cls = classify(mask, spec, with_margin=False)
    if cls.label == "violated":
        raise ValueError("curvature pair is violated; no solution exists")
    if cls.label == "extremal":
        result = solve_extremal(mask, spec, scfg, classification=cls)
        field = result.limit
        residual = result.levels[-1].report.residual
        info = {
            "mode": "extremal-ladder",
            "levels": [
                {
                    "t": lv.t,
                    "median_shift": lv.median_shift,
                    "energy": lv.report.final_energy,
                    "residual": lv.report.residual,
                    "iterations": lv.report.iterations,
                    "converged": lv.report.converged,
                }
                for lv in result.levels
            ],
            "epi_distances": result.epi_distances,
            "epi_monotone": result.monotone_ok,
            "n_plus_cells": int(result.n_plus.sum()),
            "n_minus_cells": int(result.n_minus.sum()),
            "exterior_datum": 0.0,
        }
        return spec, curv_info, cls, scfg, field, residual, info, result
    phi = float(params.get("phi", scfg.phi))
    rep = solve_dirichlet(mask, spec, phi, scfg, classification=cls)
    field = median_normalize(rep.field, mask)
    info = {
        "mode": "penalized-dirichlet",
        "energy": rep.final_energy,
        "iterations": rep.iterations,
        "converged": rep.converged,
        "status": rep.status,
        "exterior_datum": phi,
    }
    return spec, curv_info, cls, scfg, field, rep.residual, info, None


def task_solve(cfg, dom, mask, out: Path) -> dict:
    spec, curv_info, cls, scfg, field, residual, info, result = _run_solve(cfg, mask)
    params = cfg.get("params", {})
    report = {
        "classification": cls.label,
        "curvature": curv_info,
        "solution": info,
        "interior_residual": residual,
    }
    seeds = params.get("uniqueness_seeds")
    if seeds:
        report["uniqueness_probe"] = uniqueness_probe(mask, spec, scfg, seeds)
    write_report(out / "solve.json", report)
    write_scalar_csv(out / "height.csv", field.field)
    write_pgm(out / "height.pgm", field.field)
    write_vector_csv(out / "tu.csv", tu_field(field.field))
    if result is not None:
        write_ladder_csv(out / "ladder.csv", result)
    return report


def _build_trace_field(cfg, mask, params) -> DivField:
    kind = params.get("field", "twisting")
    grid = mask.grid
    if kind == "twisting":
        return twisting_field(int(params.get("i_max", 1)), grid, mask)
    if kind == "uniform":
        vx, vy = params.get("vector", (1.0, 0.0))
        vals = np.stack([np.full(grid.shape, float(vx)), np.full(grid.shape, float(vy))])
        return DivField(VectorField(grid, vals), mask, div=ScalarField(grid, np.zeros(grid.shape)))
    if kind == "radial":
        x, y = grid.cell_centers()
        return DivField(
            VectorField(grid, np.stack([x, y])),
            mask,
            div=ScalarField(grid, np.full(grid.shape, 2.0)),
        )
    if kind == "solve":
        spec, _, cls, scfg, field, _, _, result = _run_solve(cfg, mask)
        eval_mask = result.solve_mask if result is not None else mask
        return DivField(tu_field(field.field), eval_mask)
    raise ConfigError(f"unknown trace field kind {kind!r}")


def task_trace(cfg, dom, mask, out: Path) -> dict:
    params = cfg.get("params", {})
    xi = _build_trace_field(cfg, mask, params)
    eval_mask = xi.mask
    eps_levels = params.get("eps_levels")
    trace = weak_normal_trace(
        xi, eval_mask, eps_levels=eps_levels, arc_count=int(params.get("arc_count", 64))
    )
    ones = np.ones(eval_mask.grid.shape)
    residual = gauss_green_residual(xi, ones, eval_mask, trace)
    values = trace.values()
    report = {
        "arc_count": len(trace.arcs),
        "eps_levels": trace.eps_levels,
        "sup_norm": trace.sup_norm,
        "sup_ok": trace.sup_ok,
        "trace_min": float(values.min()),
        "trace_max": float(values.max()),
        "gauss_green_residual": residual,
    }
    write_report(out / "trace.json", report)
    write_trace_csv(out / "trace.csv", trace)
    return report


def task_verticality(cfg, dom, mask, out: Path) -> dict:
    params = cfg.get("params", {})
    spec, curv_info, cls, scfg, field, residual, info, result = _run_solve(cfg, mask)
    depths = params.get("flux_depths", [0.2, 0.1, 0.05])
    ladder = build_ladder(mask, sorted(depths, reverse=True))
    fluxes = verticality_flux(field, ladder)
    eval_mask = result.solve_mask if result is not None else mask
    xi = DivField(tu_field(field.field), eval_mask)
    report = {
        "classification": cls.label,
        "perimeter": perimeter(mask),
        "total_curvature": total_curvature(mask, spec),
        "flux_depths": [lv.t for lv in ladder.levels],
        "fluxes": fluxes,
    }
    band_eps = params.get("band_eps")
    if band_eps is not None:
        report["boundary_layer_eps"] = band_eps
        report["boundary_layer_flux"] = boundary_layer_flux(xi, eval_mask, float(band_eps))
    bad = params.get("bad_set")
    if bad:
        profile = bad_set_density(
            xi,
            eval_mask,
            float(bad["t"]),
            tuple(bad["z"]),
            [float(r) for r in bad["radii"]],
            tau=bad.get("tau"),
        )
        report["bad_set_ratios"] = profile.bad_ratios
        report["bad_set_radii"] = profile.radii
        write_density_csv(out / "bad_set.csv", profile)
    write_report(out / "verticality.json", report)
    return report


def task_superreduced(cfg, dom, mask, out: Path) -> dict:
    params = cfg.get("params", {})
    res = super_reduced_test(
        mask,
        tuple(params["point"]),
        [float(s) for s in params["scales"]],
        float(params["eps"]),
    )
    report = {
        "verdict": res.verdict,
        "scales": res.scales,
        "worst_excess": res.worst_excess,
        "usable": res.usable,
    }
    write_report(out / "superreduced.json", report)
    return report


def task_stability(cfg, dom, mask, out: Path) -> dict:
    return stability_experiment(cfg, dom, mask, out)


def stability_experiment(cfg, dom, mask, out: Path) -> dict:
    """Fill holes one at a time, solving the normalized-curvature pair each step.

    Each intermediate pair must classify as extremal under the normalized
    constant curvature; a classification failure is recorded and stops the
    run (an experimental finding, not a bug).  Reports epigraph distances
    between consecutive solutions and to the final disk solution on the
    configured compact.
    """
    if not isinstance(dom, DiskWithHoles):
        raise ConfigError("stability experiment needs a disk-minus-balls domain")
    params = cfg.get("params", {})
    scfg = _solver_config(params)
    order = params.get("fill_order", "smallest-first")
    if order != "smallest-first":
        raise ConfigError("only smallest-first fill order is implemented")
    k_radius = float(params.get("compact_radius", 0.8))
    grid = mask.grid
    x, y = grid.cell_centers()
    cx, cy = dom.center
    compact = (x - cx) ** 2 + (y - cy) ** 2 <= k_radius**2

    n_holes = len(dom.holes)
    steps = []
    fields = []
    status = "completed"
    for j in range(n_holes + 1):
        sub = dom.fill_holes(n_holes - j) if j else dom
        sub_mask = rasterize(sub, grid)
        rep = normalized_extremal_curvature(sub_mask, with_margin=False)
        step: dict = {
            "holes_remaining": n_holes - j,
            "normalized_curvature": rep.value,
            "classification": rep.classification.label,
            "perimeter": rep.classification.perimeter,
            "area": area(sub_mask),
        }
        if rep.classification.label != "extremal":
            step["failure"] = "pair is not extremal under normalized curvature"
            steps.append(step)
            status = f"stopped at step {j}: classification failure"
            break
        try:
            result = solve_extremal(
                sub_mask, rep.curvature, scfg, classification=rep.classification
            )
        except Exception as exc:  # per-level failure: record and continue
            step["failure"] = f"solver failure: {exc}"
            steps.append(step)
            fields.append(None)
            continue
        step["solver"] = {
            "levels": len(result.levels),
            "epi_distances": result.epi_distances,
            "converged": all(lv.report.converged for lv in result.levels),
        }
        fields.append(result.limit.values)
        steps.append(step)

    m_cap = scfg.resolved_m_cap(mask)
    consecutive = []
    to_final = []
    final = next((f for f in reversed(fields) if f is not None), None)
    for a, b in zip(fields, fields[1:]):
        if a is None or b is None:
            consecutive.append(None)
        else:
            consecutive.append(
                grid.cell_area
                * float(np.abs(np.clip(a, -m_cap, m_cap) - np.clip(b, -m_cap, m_cap))[compact].sum())
            )
    for f in fields:
        if f is None or final is None:
            to_final.append(None)
        else:
            to_final.append(
                grid.cell_area
                * float(np.abs(np.clip(f, -m_cap, m_cap) - np.clip(final, -m_cap, m_cap))[compact].sum())
            )
    report = {
        "status": status,
        "steps": steps,
        "compact_radius": k_radius,
        "epi_consecutive": consecutive,
        "epi_to_final": to_final,
    }
    write_report(out / "stability.json", report)
    if final is not None:
        write_pgm(out / "final_height.pgm", ScalarField(grid, final))
    return report


TASK_RUNNERS = {
    "classify": task_classify,
    "cheeger": task_cheeger,
    "solve": task_solve,
    "trace": task_trace,
    "verticality": task_verticality,
    "stability": task_stability,
    "superreduced": task_superreduced,
}


# ---------------------------------------------------------------------------
# Entry points
# ---------------------------------------------------------------------------


def _setup_out(cfg: dict, override: str | None) -> Path:
    out = Path(override or cfg.get("output_dir", "pmc-run"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest(cfg, out: Path, timings: dict, error: dict | None) -> None:
    files = {}
    for p in sorted(out.iterdir()):
        if p.name == "manifest.json" or p.is_dir():
            continue
        files[p.name] = sha256_file(p)
    manifest = {
        "inputs": round_floats(cfg),
        "version": __version__,
        "seed": cfg.get("seed", 0),
        "timings_s": {k: round(v, 3) for k, v in timings.items()},
        "files": files,
        "error": error,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")


def run_scenario(cfg: dict, out_override: str | None = None) -> int:
    out = _setup_out(cfg, out_override)
    handler = logging.FileHandler(out / "log.txt", mode="w")
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    log.addHandler(handler)
    log.setLevel(logging.INFO)
    timings: dict[str, float] = {}
    error = None
    code = EXIT_OK
    try:
        np.random.seed(int(cfg.get("seed", 0)))
        t0 = time.perf_counter()
        dom, grid, mask = build_domain(cfg)
        timings["domain_build"] = time.perf_counter() - t0
        log.info(
            "domain ready: %d interior cells, h=%g", mask.cell_count, grid.h
        )
        t0 = time.perf_counter()
        TASK_RUNNERS[cfg["task"]](cfg, dom, mask, out)
        timings["task"] = time.perf_counter() - t0
        log.info("task %s completed", cfg["task"])
    except ConfigError as exc:
        error = {"stage": "config", "message": str(exc)}
        code = EXIT_CONFIG
    except DomainBuildError as exc:
        error = {"stage": "domain-build", "message": str(exc)}
        code = EXIT_DOMAIN
    except Exception as exc:
        error = {
            "stage": "task",
            "message": str(exc),
            "type": type(exc).__name__,
        }
        log.error("task failed: %s\n%s", exc, traceback.format_exc())
        code = EXIT_TASK
    finally:
        _manifest(cfg, out, timings, error)
        log.removeHandler(handler)
        handler.close()
    if error:
        print(f"error [{error['stage']}]: {error['message']}", file=sys.stderr)
    return code


def validate_config(cfg: dict) -> int:
    dom, grid, mask = build_domain(cfg)
    print(
        f"ok: task={cfg['task']} grid={grid.nx}x{grid.ny} h={grid.h:.6g} "
        f"interior-cells={mask.cell_count}"
    )
    return EXIT_OK


def dump_domain(cfg: dict, out_override: str | None) -> int:
    out = _setup_out(cfg, out_override)
    dom, grid, mask = build_domain(cfg)
    report = {
        "grid": {"nx": grid.nx, "ny": grid.ny, "h": grid.h, "origin": list(grid.origin)},
        "area": area(mask),
        "perimeter": perimeter(mask),
        "interior_cells": mask.cell_count,
    }
    if dom is not None:
        report["domain"] = domain_to_dict(dom)
        report["exact_area"] = dom.exact_area
        report["exact_perimeter"] = dom.exact_perimeter
    eps_spec = cfg.get("params", {}).get("minkowski_epsilons")
    if eps_spec:
        est = inner_minkowski_content(mask, [float(e) for e in eps_spec])
        report["minkowski_content"] = est.content
        report["minkowski_residual"] = est.fit_residual
    depths = cfg.get("params", {}).get("ladder_depths")
    if depths:
        ladder = build_ladder(mask, sorted((float(t) for t in depths), reverse=True))
        report["ladder"] = [
            {"t": lv.t, "perimeter": lv.perimeter, "area": lv.area} for lv in ladder.levels
        ]
        report["ladder_perimeter_limit"] = ladder.perimeter_limit
        report["ladder_converged"] = ladder.converged
    write_pgm(out / "mask.pgm", mask.indicator(), grid)
    write_report(out / "domain.json", report)
    _manifest(cfg, out, {}, None)
    print(json.dumps(round_floats(report), sort_keys=True))
    return EXIT_OK


def _apply_thread_flags(args) -> None:
    threads = 1 if args.deterministic else (args.threads or 1)
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(threads))


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="pmc-lab",
        description="numerical laboratory for prescribed-curvature capillary problems",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, desc in (
        ("run", "execute a scenario config"),
        ("validate", "check a scenario config without running it"),
        ("dump-domain", "rasterize the domain and report its measures"),
    ):
        p = sub.add_parser(name, help=desc)
        p.add_argument("config", type=Path)
        p.add_argument("--out", default=None, help="output directory override")
        p.add_argument("--threads", type=int, default=None, help="thread cap for array math")
        p.add_argument(
            "--deterministic",
            action="store_true",
            help="single-threaded reductions for bitwise reproducibility",
        )
    args = parser.parse_args(argv)
    _apply_thread_flags(args)
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"error [config]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "run":
            return run_scenario(cfg, args.out)
        if args.command == "validate":
            return validate_config(cfg)
        return dump_domain(cfg, args.out)
    except ConfigError as exc:
        print(f"error [config]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DomainBuildError as exc:
        print(f"error [domain-build]: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except Exception as exc:
        print(f"error [task]: {exc}", file=sys.stderr)
        return EXIT_TASK


if __name__ == "__main__":
    sys.exit(main())
