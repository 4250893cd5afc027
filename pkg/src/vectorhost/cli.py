"""Command-line entry point.

    vectorhost simulate    --config run.yaml [--out DIR]
    vectorhost equilibrium --config run.yaml
    vectorhost spectral    --config run.yaml
    vectorhost gsa         --config run.yaml [--workers N] [--seed S]
    vectorhost transect    --config run.yaml

Every command writes its CSV artifacts plus ``manifest.json`` (config hash,
library versions, seed, wall time, artifact list, error if any) into the
output directory. Exit status: 0 on success, 1 on a runtime failure, 2 on an
invalid configuration.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
import time
from importlib import metadata
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy

from . import analysis, gsa
from .config import (
    ConfigValidationError,
    GsaSpec,
    RunConfig,
    config_hash,
    introduction_point,
    make_domain,
    make_params,
    make_simulation,
    parse_config,
    serialize_config,
    sub_seed,
)
from .export import InterpolationError, export_heatmap_grid, heatmap_rows
from .geometry import SpatialDomain
from .pde_core import COMPARTMENTS
from .scenarios import ConfigError, fmt, simulate_m1, simulate_m2, steps_between, write_snapshots_csv

log = logging.getLogger("vectorhost")

COMMANDS = ("simulate", "equilibrium", "spectral", "gsa", "transect")
MANIFEST = "manifest.json"


def _versions() -> dict[str, str]:
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__, "package": pkg}


def _simulate(config: RunConfig, domain: SpatialDomain):
    sim = make_simulation(config, domain)
    return simulate_m2(sim) if sim.impulse is not None else simulate_m1(sim)


def _write_ledger(traj, path: Path) -> Path:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "host_dev", "vector_integral", "vector_dev", "clamp_mass"])
        for e in traj.ledger:
            w.writerow([fmt(e.t), fmt(e.host_dev), fmt(e.vector_integral), fmt(e.vector_dev), fmt(e.clamp_mass)])
    return path


def cmd_simulate(config: RunConfig, out: Path, workers: int) -> dict:
    domain = make_domain(config)
    traj = _simulate(config, domain)
    return {"artifacts": [write_snapshots_csv(traj, domain, out / "snapshots.csv"), _write_ledger(traj, out / "ledger.csv")]}


def cmd_equilibrium(config: RunConfig, out: Path, workers: int) -> dict:
    domain = make_domain(config)
    sim = make_simulation(config, domain)
    params = sim.params
    N = sim.initial.hosts()
    if sim.impulse is None:
        spec = config.equilibrium
        C_star = spec.C_star if spec is not None and spec.C_star is not None else domain.integrate(sim.initial.vectors())
        pair = analysis.equilibria_m1(params, domain, N, C_star)
        return {"artifacts": [analysis.write_equilibria(domain, pair, out / "equilibria.csv")]}
    orbit = analysis.periodic_equilibrium_m2(params, domain, N, sim.impulse, dt=sim.dt, scheme=sim.scheme)
    path = out / "periodic_orbit.csv"
    centers = domain.cell_centers
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "x", "y", "S_v", "I_v"])
        for k, t in enumerate(orbit.times):
            for i in range(domain.n_cells):
                w.writerow([fmt(t), fmt(centers[i, 0]), fmt(centers[i, 1]), fmt(orbit.S_v[k, i]), fmt(orbit.I_v[k, i])])
    return {"artifacts": [path]}


def cmd_spectral(config: RunConfig, out: Path, workers: int) -> dict:
    domain = make_domain(config)
    params = make_params(config)
    spec = config.spectral
    potential = spec.potential if spec is not None else "pressure"
    tol = spec.tol if spec is not None else 1e-10
    if potential == "pressure":
        N = make_simulation(config, domain).initial.hosts()
        potential = params.field("beta_h", domain.n_cells) * N
    res = analysis.principal_eigenvalue(domain, params.field("D", domain.n_cells), potential, tol=tol)
    return {"artifacts": analysis.write_eigenpair(domain, res, out)}


def _transect(config: RunConfig, domain: SpatialDomain) -> gsa.Transect:
    g = config.gsa or GsaSpec()
    return gsa.make_transect(domain, introduction_point(config, domain), g.transect_direction, g.transect_points)


def cmd_transect(config: RunConfig, out: Path, workers: int) -> dict:
    domain = make_domain(config)
    tr = _transect(config, domain)
    traj = _simulate(config, domain)
    series = {c: gsa.extract_transect(traj, domain, tr, c)[1] for c in COMPARTMENTS}
    path = out / "transect.csv"
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "point", "x", "y"] + list(COMPARTMENTS))
        for k, t in enumerate(traj.times):
            for p, (x, y) in enumerate(tr.points):
                w.writerow([fmt(t), p + 1, fmt(x), fmt(y)] + [fmt(series[c][k, p]) for c in COMPARTMENTS])
    return {"artifacts": [path]}


def _check_gsa_times(config: RunConfig, times) -> None:
    s = config.solver
    for t in times:
        if not 0 <= t <= s.t_end:
            raise ConfigError(f"gsa time {t!r} outside [0, t_end]")
        if t > 0:
            steps_between(t, s.snapshot_every, "gsa time (in snapshot units)")


def cmd_gsa(config: RunConfig, out: Path, workers: int) -> dict:
    g = config.gsa or GsaSpec()
    _check_gsa_times(config, g.times)
    domain = make_domain(config)
    base = make_simulation(config, domain)
    names = tuple(p for p, _, _ in g.ranges)
    ranges = np.array([[lo, hi] for _, lo, hi in g.ranges])
    design = gsa.make_design(ranges, g.M, sub_seed(config.seed, "design"), names=names)
    map_cells = gsa.sample_cells(domain, g.n_map_points, sub_seed(config.seed, "map_points"))
    tr = _transect(config, domain)
    cells = np.unique(np.concatenate([map_cells, tr.cells]))
    spec = gsa.OutputSpec(tuple(g.compartments), tuple(g.times), cells)
    runner = gsa.ScenarioRunner(base, names, batch_size=g.batch_size)
    results, outputs = gsa.spatiotemporal_gsa(runner, design, spec, domain, workers=workers, cache_dir=out / "cache")

    artifacts = [gsa.write_design_manifest(design, out / "design.csv")]
    on_map = set(map_cells.tolist())
    map_results = [r for r in results if r.cell in on_map]
    artifacts.append(gsa.write_gsa_csv(map_results, names, out / "gsa_indices.csv"))
    artifacts.append(_write_heatmaps(map_results, names, domain, g.grid_resolution, out / "heatmaps.csv"))
    artifacts.append(_write_class_means(design, spec, outputs, tr, g.n_classes, out / "transect_class_means.csv"))
    return {
        "artifacts": artifacts,
        "n_evaluations": int(outputs.n_evaluations),
        "failed_rows": {str(k): v for k, v in sorted(outputs.failures.items())},
        "cache_hits": outputs.cache_hits,
    }


def _write_heatmaps(results, names, domain, resolution, path: Path) -> Path:
    """Long-format grid export of mean, std and clamped PI maps."""
    groups: dict[tuple[str, float], list] = {}
    for r in results:
        groups.setdefault((r.compartment, r.t), []).append(r)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["compartment", "t", "quantity", "x", "y", "value"])
        for (comp, t), rs in groups.items():
            quantities = {
                "mean": [(r, r.mean) for r in rs if r.status != gsa.STATUS_MISSING],
                "std": [(r, np.sqrt(r.variance)) for r in rs if r.status != gsa.STATUS_MISSING],
            }
            for i, name in enumerate(names):
                quantities[f"PI_{name}"] = [(r, r.PI[i]) for r in rs if r.status == gsa.STATUS_OK]
            for q, pairs in quantities.items():
                if len(pairs) < 3:
                    continue
                pts = np.array([(r.x, r.y) for r, _ in pairs])
                vals = np.array([v for _, v in pairs])
                try:
                    grid = export_heatmap_grid(pts, vals, domain, resolution)
                except InterpolationError:
                    log.warning("skipping %s map at t=%s: degenerate interpolation input", q, t)
                    continue
                for x, y, v in heatmap_rows(grid):
                    w.writerow([comp, fmt(t), q, x, y, v])
    return path


def _write_class_means(design, spec, outputs, tr, n_classes, path: Path) -> Path:
    pos = np.searchsorted(spec.cells, tr.cells)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["param", "class", "low", "high", "count", "compartment", "t", "point", "x", "y", "mean"])
        ok = ~np.isnan(outputs.values).reshape(outputs.n_evaluations, -1).any(axis=1)
        for i, name in enumerate(design.names):
            cm = gsa.class_means(outputs.values[ok][..., pos], design.rows[ok, i], design.ranges[i], n_classes)
            for c in range(n_classes):
                for ci, comp in enumerate(spec.compartments):
                    for ti, t in enumerate(spec.times):
                        for p, (x, y) in enumerate(tr.points):
                            v = cm.means[c, ci, ti, p]
                            w.writerow(
                                [name, c + 1, fmt(cm.edges[c]), fmt(cm.edges[c + 1]), int(cm.counts[c]),
                                 comp, fmt(t), p + 1, fmt(x), fmt(y), "" if np.isnan(v) else fmt(v)]
                            )
    return path


HANDLERS = {
    "simulate": cmd_simulate,
    "equilibrium": cmd_equilibrium,
    "spectral": cmd_spectral,
    "gsa": cmd_gsa,
    "transect": cmd_transect,
}


def _write_manifest(out: Path, manifest: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def run_command(
    command: str,
    config: RunConfig | str | Path,
    out: str | Path | None = None,
    workers: int = 1,
    seed: int | None = None,
) -> int:
    """Run one subcommand; returns the process exit status."""
    start = time.perf_counter()
    manifest: dict = {"command": command, "versions": _versions(), "status": "error", "artifacts": []}
    out_dir = Path(out) if out is not None else None
    try:
        if command not in HANDLERS:
            raise ConfigError(f"unknown command {command!r}")
        if not isinstance(config, RunConfig):
            config = parse_config(config)
        if seed is not None:
            config = config.replace(seed=int(seed))
        if out_dir is None:
            base = Path(config.base_dir) if config.base_dir else Path.cwd()
            out_dir = base / config.output_dir
        manifest.update(seed=config.seed, config_hash=config_hash(config))
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "config.yaml").write_text(serialize_config(config), encoding="utf-8")
        result = HANDLERS[command](config, out_dir, workers)
        manifest["artifacts"] = sorted(["config.yaml"] + [Path(p).name for p in result.pop("artifacts")])
        manifest.update(result)
        manifest["status"] = "ok"
        code = 0
    except (ConfigValidationError, ConfigError) as exc:
        errors = getattr(exc, "errors", [str(exc)])
        manifest["error"] = "; ".join(errors)
        for e in errors:
            print(f"config error: {e}", file=sys.stderr)
        code = 2
    except Exception as exc:  # any module failure ends the run with a diagnostic
        manifest["error"] = f"{type(exc).__name__}: {exc}"
        print(f"error: {manifest['error']}", file=sys.stderr)
        code = 1
    manifest["wall_time_s"] = round(time.perf_counter() - start, 3)
    if out_dir is not None:
        _write_manifest(out_dir, manifest)
    return code


def main(argv: Sequence[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="vectorhost", description="Vector-host reaction-diffusion simulations and sensitivity analysis.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="YAML run configuration")
    parser.add_argument("--workers", type=int, default=1, help="worker processes for gsa")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--out", default=None, help="output directory (overrides config)")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return run_command(args.command, args.config, out=args.out, workers=args.workers, seed=args.seed)


if __name__ == "__main__":
    sys.exit(main())
