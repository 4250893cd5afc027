"""Variance-based sensitivity analysis over space and time.

Sampling uses Latin hypercubes; the design evaluates the base matrix ``A``
plus, for every parameter ``i``, ``A`` with column ``i`` taken from ``B``
and ``B`` with column ``i`` taken from ``A`` -- ``M (2K + 1)`` model runs.
First-order indices come from pairs sharing only column ``i`` and total
indices from pairs sharing every column except ``i``, both through the
correlation-type estimator

    S = (<y y'> - m^2) / (<(y^2 + y'^2)/2> - m^2),  m = <(y + y')/2>.
"""

from __future__ import annotations

import csv
import hashlib
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .geometry import SpatialDomain
from .pde_core import COMPARTMENTS, StateFields, Trajectory
from .scenarios import (
    ImpulseSchedule,
    SimulationConfig,
    config_fingerprint,
    fmt,
    simulate_m1,
    simulate_m2,
)

log = logging.getLogger(__name__)

BLOCK_A = "A"
BLOCK_AB = "A_B"  # A with column i from B
BLOCK_BA = "B_A"  # B with column i from A


class DesignShapeError(ValueError):
    def __init__(self, detail: str = "") -> None:
        super().__init__("design shape error" + (f": {detail}" if detail else ""))


class DegenerateVarianceError(ValueError):
    def __init__(self) -> None:
        super().__init__("degenerate variance")


class TransectError(ValueError):
    pass


# --------------------------------------------------------------------------
# sampling and design


def lhs_sample(K: int, M: int, seed) -> np.ndarray:
    """``M x K`` Latin hypercube on ``[0, 1)``: each column holds exactly
    one point in every stratum ``[j/M, (j+1)/M)``."""
    if K < 1 or M < 2:
        raise ValueError("lhs_sample needs K >= 1 and M >= 2")
    rng = np.random.default_rng(seed)
    strata = np.argsort(rng.random((M, K)), axis=0)
    out = (strata + rng.random((M, K))) / M
    # (j + u) / M can round up to (j + 1) / M for u just below 1
    return np.minimum(out, np.nextafter((strata + 1) / M, 0))


def base_matrices(K: int, M: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Two independent Latin hypercubes from sub-seeds of ``seed``."""
    sa, sb = np.random.SeedSequence(seed).spawn(2)
    return lhs_sample(K, M, sa), lhs_sample(K, M, sb)


@dataclass(frozen=True)
class GsaDesign:
    """Evaluation plan.

    ``unit_rows`` are in ``[0, 1]^K``; ``rows`` are scaled to ``ranges``.
    Row ``r`` belongs to block ``blocks[r]`` and, for substituted blocks,
    ``substituted[r]`` is the parameter index (``-1`` for block A).
    """

    names: tuple[str, ...]
    ranges: np.ndarray
    A: np.ndarray
    B: np.ndarray
    unit_rows: np.ndarray
    rows: np.ndarray
    blocks: tuple[str, ...]
    substituted: np.ndarray
    seed: int | None = None

    @property
    def K(self) -> int:
        return self.A.shape[1]

    @property
    def M(self) -> int:
        return self.A.shape[0]

    def split(self, y: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Split row outputs ``(n_rows, ...)`` into ``y_A (M, ...)``,
        ``y_AB (K, M, ...)`` and ``y_BA (K, M, ...)``."""
        M, K = self.M, self.K
        y = np.asarray(y)
        if y.shape[0] != M * (2 * K + 1):
            raise DesignShapeError(f"expected {M * (2 * K + 1)} rows, got {y.shape[0]}")
        y_A = y[:M]
        y_AB = y[M : M * (K + 1)].reshape((K, M) + y.shape[1:])
        y_BA = y[M * (K + 1) :].reshape((K, M) + y.shape[1:])
        return y_A, y_AB, y_BA


def build_design(A, B, ranges, names: Sequence[str] | None = None, seed: int | None = None) -> GsaDesign:
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.ndim != 2 or A.shape != B.shape:
        raise DesignShapeError("A and B must be matrices of the same shape")
    M, K = A.shape
    ranges = np.asarray(ranges, dtype=float)
    if ranges.shape != (K, 2) or np.any(ranges[:, 1] < ranges[:, 0]):
        raise DesignShapeError("ranges must be K (low, high) pairs")
    if np.any((A < 0) | (A > 1) | (B < 0) | (B > 1)):
        raise ValueError("A and B must lie in [0, 1]")
    names = tuple(names) if names is not None else tuple(f"p{i + 1}" for i in range(K))
    if len(names) != K:
        raise DesignShapeError("one name per parameter")

    parts = [A]
    blocks = [BLOCK_A] * M
    subst = [-1] * M
    for i in range(K):
        AB = A.copy()
        AB[:, i] = B[:, i]
        parts.append(AB)
        blocks += [BLOCK_AB] * M
        subst += [i] * M
    for i in range(K):
        BA = B.copy()
        BA[:, i] = A[:, i]
        parts.append(BA)
        blocks += [BLOCK_BA] * M
        subst += [i] * M
    unit = np.vstack(parts)
    lo, hi = ranges[:, 0], ranges[:, 1]
    rows = np.clip(lo + unit * (hi - lo), lo, hi)
    return GsaDesign(names, ranges, A, B, unit, rows, tuple(blocks), np.array(subst), seed)


def make_design(ranges, M: int, seed: int, names: Sequence[str] | None = None) -> GsaDesign:
    ranges = np.asarray(ranges, dtype=float)
    A, B = base_matrices(ranges.shape[0], M, seed)
    return build_design(A, B, ranges, names=names, seed=seed)


# --------------------------------------------------------------------------
# estimation


def pair_index(y: np.ndarray, y2: np.ndarray) -> np.ndarray:
    """Correlation-type index for paired outputs (axis 0 is the sample)."""
    m = 0.5 * (y.mean(axis=0) + y2.mean(axis=0))
    num = (y * y2).mean(axis=0) - m * m
    den = 0.5 * ((y * y).mean(axis=0) + (y2 * y2).mean(axis=0)) - m * m
    with np.errstate(divide="ignore", invalid="ignore"):
        return num / den


@dataclass(frozen=True)
class SobolIndices:
    PI_raw: np.ndarray
    TI_raw: np.ndarray
    variance: float
    mean: float

    @property
    def PI(self) -> np.ndarray:
        return np.clip(self.PI_raw, 0.0, 1.0)

    @property
    def TI(self) -> np.ndarray:
        return np.clip(self.TI_raw, 0.0, 1.0)


def _degenerate(all_y: np.ndarray) -> np.ndarray:
    spread = np.ptp(all_y, axis=0)
    scale = np.abs(all_y).max(axis=0)
    return spread <= 1e-12 * scale


def _indices_many(y_A: np.ndarray, y_AB: np.ndarray, y_BA: np.ndarray):
    """Vectorized over trailing output axes; returns PI, TI (K, ...), var, mean, degenerate."""
    K = y_AB.shape[0]
    PI = np.stack([pair_index(y_A, y_BA[i]) for i in range(K)])
    TI = np.stack([1.0 - pair_index(y_A, y_AB[i]) for i in range(K)])
    all_y = np.concatenate([y_A[None], y_AB, y_BA]).reshape((-1,) + y_A.shape[1:])
    return PI, TI, all_y.var(axis=0), all_y.mean(axis=0), _degenerate(all_y)


def estimate_indices(y_A, y_AB, y_BA) -> SobolIndices:
    """First-order (PI) and total (TI) indices for one scalar output.

    Args:
        y_A: ``(M,)`` outputs on the base matrix ``A``.
        y_AB: ``(K, M)`` outputs on ``A`` with column ``i`` from ``B``.
        y_BA: ``(K, M)`` outputs on ``B`` with column ``i`` from ``A``.

    Raises:
        DegenerateVarianceError: the output does not vary over the design.
    """
    y_A = np.asarray(y_A, dtype=float)
    y_AB = np.asarray(y_AB, dtype=float)
    y_BA = np.asarray(y_BA, dtype=float)
    if y_A.ndim != 1 or y_AB.shape != y_BA.shape or y_AB.shape[1:] != y_A.shape:
        raise DesignShapeError("outputs must be (M,), (K, M), (K, M)")
    PI, TI, var, mean, degenerate = _indices_many(y_A, y_AB, y_BA)
    if degenerate or not var > 0:
        raise DegenerateVarianceError()
    return SobolIndices(PI_raw=PI, TI_raw=TI, variance=float(var), mean=float(mean))


# --------------------------------------------------------------------------
# simulation campaign


@dataclass(frozen=True)
class OutputSpec:
    """Which model outputs enter the analysis: compartments at snapshot
    times, restricted to a subset of cells."""

    compartments: tuple[str, ...]
    times: tuple[float, ...]
    cells: np.ndarray

    def __post_init__(self) -> None:
        bad = set(self.compartments) - set(COMPARTMENTS)
        if bad or not self.compartments or not self.times or len(self.cells) == 0:
            raise ValueError(f"invalid output spec {sorted(bad)}")
        object.__setattr__(self, "cells", np.asarray(self.cells, dtype=np.int64))

    @property
    def shape(self) -> tuple[int, int, int]:
        return (len(self.compartments), len(self.times), len(self.cells))

    def extract(self, trajectory: Trajectory, copies: int | None = None) -> np.ndarray:
        """Output array ``spec.shape``; with ``copies=R`` the trajectory is
        read as ``R`` equal-size stacked domains and ``(R,) + spec.shape``
        is returned."""
        index = {round(t, 9): k for k, t in enumerate(trajectory.times)}
        R = 1 if copies is None else copies
        out = np.empty((R,) + self.shape)
        for ti, t in enumerate(self.times):
            k = index.get(round(t, 9))
            if k is None:
                raise ValueError(f"no snapshot at t={t}")
            snap = trajectory.snapshots[k]
            for ci, comp in enumerate(self.compartments):
                out[:, ci, ti] = getattr(snap, comp).reshape(R, -1)[:, self.cells]
        return out[0] if copies is None else out

    def fingerprint(self) -> str:
        return f"{self.compartments}|{tuple(map(repr, self.times))}|{hashlib.sha256(self.cells.tobytes()).hexdigest()}"


@dataclass(frozen=True)
class ScenarioRunner:
    """Picklable simulator: runs ``base`` with the named parameters replaced.

    With ``batch_size > 1`` design rows are evaluated in fixed blocks of row
    indices, each block as one simulation on ``batch_size`` disconnected
    copies of the domain carrying per-cell parameter fields. Copies exchange
    nothing (no shared faces), so each copy follows its own row's dynamics;
    only the rounding of the shared sparse factorization differs from a
    one-row run.
    """

    base: SimulationConfig
    param_names: tuple[str, ...]
    batch_size: int = 1

    def _config(self, params, domain=None, initial=None, impulse=None) -> SimulationConfig:
        b = self.base
        return SimulationConfig(
            domain=domain if domain is not None else b.domain,
            params=params,
            initial=initial if initial is not None else b.initial,
            t_end=b.t_end,
            dt=b.dt,
            snapshot_every=b.snapshot_every,
            scheme=b.scheme,
            impulse=impulse if impulse is not None else b.impulse,
            t_start=b.t_start,
        )

    @staticmethod
    def _simulate(cfg: SimulationConfig) -> Trajectory:
        return simulate_m2(cfg) if cfg.impulse is not None else simulate_m1(cfg)

    def __call__(self, values: Sequence[float]) -> Trajectory:
        params = self.base.params.replace(**dict(zip(self.param_names, map(float, values))))
        return self._simulate(self._config(params))

    def evaluate_batch(self, rows: np.ndarray, spec: "OutputSpec") -> np.ndarray:
        """Outputs ``(len(rows),) + spec.shape`` from one stacked simulation."""
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        R = rows.shape[0]
        dom = self.base.domain
        n = dom.n_cells
        nrows, ncols = dom.shape
        # copies stacked in y with one empty row between them; row-major
        # compact indexing then gives copy r the cells r*n .. r*n + n - 1
        mask = np.zeros((R * (nrows + 1) - 1, ncols), dtype=bool)
        for r in range(R):
            mask[r * (nrows + 1) : r * (nrows + 1) + nrows] = dom.mask
        tiled = SpatialDomain(dom.cell_size, mask, dom.origin)
        p = self.base.params
        fields_ = {}
        for name in ("beta_v", "beta_h", "D"):
            if name in self.param_names:
                fields_[name] = np.repeat(rows[:, self.param_names.index(name)], n)
            else:
                fields_[name] = np.tile(p.field(name, n), R)
        extra = set(self.param_names) - set(fields_)
        if extra:
            raise ValueError(f"batched evaluation cannot vary {sorted(extra)}")
        params = p.replace(**fields_)
        initial = StateFields.from_array(np.tile(self.base.initial.as_array(), (1, R)))
        impulse = self.base.impulse
        if impulse is not None:
            reset = np.broadcast_to(impulse.reset_S_v, (n,))
            impulse = ImpulseSchedule(np.tile(reset, R), impulse.period)
        traj = self._simulate(self._config(params, tiled, initial, impulse))
        return spec.extract(traj, copies=R)

    def fingerprint(self) -> str:
        return f"{config_fingerprint(self.base)}|{self.param_names}"


def row_key(runner_fp: str, spec: OutputSpec, values: np.ndarray) -> str:
    text = "|".join([runner_fp, spec.fingerprint(), ",".join(repr(float(v)) for v in values)])
    return hashlib.sha256(text.encode()).hexdigest()[:24]


def _write_row_cache(path: Path, spec: OutputSpec, out: np.ndarray) -> None:
    tmp = path.with_suffix(".tmp")
    with tmp.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["compartment", "t", "cell", "value"])
        for ci, comp in enumerate(spec.compartments):
            for ti, t in enumerate(spec.times):
                for k, cell in enumerate(spec.cells):
                    w.writerow([comp, fmt(t), int(cell), fmt(out[ci, ti, k])])
    tmp.replace(path)


def _read_row_cache(path: Path, spec: OutputSpec) -> np.ndarray:
    out = np.empty(spec.shape)
    comp_ix = {c: i for i, c in enumerate(spec.compartments)}
    time_ix = {repr(float(t)): i for i, t in enumerate(spec.times)}
    cell_ix = {int(c): i for i, c in enumerate(spec.cells)}
    with path.open(encoding="utf-8") as fh:
        r = csv.reader(fh)
        next(r)
        n = 0
        for comp, t, cell, value in r:
            out[comp_ix[comp], time_ix[t], cell_ix[int(cell)]] = float(value)
            n += 1
    if n != out.size:
        raise ValueError(f"incomplete cache file {path}")
    return out


def _evaluate(runner: Callable, spec: OutputSpec, values: np.ndarray):
    try:
        return spec.extract(runner(values)), None
    except Exception as exc:  # recorded per row; estimation skips affected outputs
        return None, f"{type(exc).__name__}: {exc}"


def _evaluate_block(runner, spec: OutputSpec, rows: np.ndarray):
    """Batched evaluation; on failure the block is re-run row by row so the
    failing rows are identified and the others still succeed."""
    try:
        outs = runner.evaluate_batch(rows, spec)
        return [(o, None) for o in outs]
    except Exception as exc:
        log.warning("batched block failed (%s); evaluating rows one by one", exc)
        return [_evaluate(runner, spec, row) for row in rows]


@dataclass
class CampaignOutputs:
    """Raw outputs of every design row, ``(n_rows,) + spec.shape``; rows that
    failed are NaN and listed in ``failures``."""

    values: np.ndarray
    failures: dict[int, str] = field(default_factory=dict)
    cache_hits: int = 0

    @property
    def n_evaluations(self) -> int:
        return self.values.shape[0]


def evaluate_design(
    runner: Callable,
    design: GsaDesign,
    spec: OutputSpec,
    workers: int = 1,
    cache_dir: str | Path | None = None,
) -> CampaignOutputs:
    """Run every design row (cached rows are read back, not re-run).

    Results are assembled by row index, so they do not depend on the worker
    count or completion order.
    """
    n = design.rows.shape[0]
    values = np.full((n,) + spec.shape, np.nan)
    result = CampaignOutputs(values)
    fp = runner.fingerprint() if hasattr(runner, "fingerprint") else repr(runner)
    cache = Path(cache_dir) if cache_dir is not None else None
    if cache is not None:
        cache.mkdir(parents=True, exist_ok=True)
    todo = []
    for r in range(n):
        if cache is not None:
            path = cache / f"row_{row_key(fp, spec, design.rows[r])}.csv"
            if path.exists():
                values[r] = _read_row_cache(path, spec)
                result.cache_hits += 1
                continue
        todo.append(r)

    def store(r, out, err):
        if err is not None:
            result.failures[r] = err
            log.warning("design row %d failed: %s", r, err)
            return
        values[r] = out
        if cache is not None:
            _write_row_cache(cache / f"row_{row_key(fp, spec, design.rows[r])}.csv", spec, out)

    batch = int(getattr(runner, "batch_size", 1))
    if batch > 1:
        # blocks are fixed ranges of row indices, independent of what is
        # cached, so every row is always computed in the same company
        pending = set(todo)
        blocks = [list(range(b, min(b + batch, n))) for b in range(0, n, batch)]
        blocks = [blk for blk in blocks if pending.intersection(blk)]
        if workers <= 1 or len(blocks) <= 1:
            done = [_evaluate_block(runner, spec, design.rows[blk]) for blk in blocks]
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futures = [pool.submit(_evaluate_block, runner, spec, design.rows[blk]) for blk in blocks]
                done = [f.result() for f in futures]
        for blk, outs in zip(blocks, done):
            for r, (out, err) in zip(blk, outs):
                if r in pending:
                    store(r, out, err)
    elif workers <= 1 or len(todo) <= 1:
        for r in todo:
            store(r, *_evaluate(runner, spec, design.rows[r]))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {r: pool.submit(_evaluate, runner, spec, design.rows[r]) for r in todo}
            for r in todo:
                store(r, *futures[r].result())
    return result


STATUS_OK = "ok"
STATUS_DEGENERATE = "degenerate variance"
STATUS_MISSING = "missing"


@dataclass(frozen=True)
class SensitivityResult:
    compartment: str
    t: float
    cell: int
    x: float
    y: float
    PI_raw: np.ndarray
    TI_raw: np.ndarray
    variance: float
    mean: float
    status: str

    @property
    def PI(self) -> np.ndarray:
        return np.clip(self.PI_raw, 0.0, 1.0)

    @property
    def TI(self) -> np.ndarray:
        return np.clip(self.TI_raw, 0.0, 1.0)


def analyse_outputs(
    design: GsaDesign, spec: OutputSpec, outputs: CampaignOutputs, domain: SpatialDomain
) -> list[SensitivityResult]:
    """Estimate indices at every (compartment, time, cell) output point."""
    y_A, y_AB, y_BA = design.split(outputs.values)
    PI, TI, var, mean, degenerate = _indices_many(y_A, y_AB, y_BA)
    failed = np.isnan(outputs.values).any(axis=0)
    centers = domain.cell_centers
    K = design.K
    results = []
    for ci, comp in enumerate(spec.compartments):
        for ti, t in enumerate(spec.times):
            for k, cell in enumerate(spec.cells):
                if failed[ci, ti, k]:
                    status = STATUS_MISSING
                elif degenerate[ci, ti, k] or not var[ci, ti, k] > 0:
                    status = STATUS_DEGENERATE
                else:
                    status = STATUS_OK
                ok = status == STATUS_OK
                results.append(
                    SensitivityResult(
                        compartment=comp,
                        t=float(t),
                        cell=int(cell),
                        x=float(centers[cell, 0]),
                        y=float(centers[cell, 1]),
                        PI_raw=PI[:, ci, ti, k] if ok else np.full(K, np.nan),
                        TI_raw=TI[:, ci, ti, k] if ok else np.full(K, np.nan),
                        variance=float(var[ci, ti, k]) if status != STATUS_MISSING else np.nan,
                        mean=float(mean[ci, ti, k]) if status != STATUS_MISSING else np.nan,
                        status=status,
                    )
                )
    return results


def spatiotemporal_gsa(
    runner: Callable,
    design: GsaDesign,
    spec: OutputSpec,
    domain: SpatialDomain,
    workers: int = 1,
    cache_dir: str | Path | None = None,
) -> tuple[list[SensitivityResult], CampaignOutputs]:
    outputs = evaluate_design(runner, design, spec, workers=workers, cache_dir=cache_dir)
    return analyse_outputs(design, spec, outputs, domain), outputs


def sample_cells(domain: SpatialDomain, n_points: int = 600, seed: int = 0) -> np.ndarray:
    """Sorted uniform subsample of cell indices (all cells if fewer)."""
    if domain.n_cells <= n_points:
        return np.arange(domain.n_cells)
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(domain.n_cells, size=n_points, replace=False))


GSA_HEADER = (
    "compartment", "t", "x", "y", "param",
    "PI_raw", "PI_clamped", "TI_raw", "TI_clamped", "variance", "mean", "status",
)


def write_gsa_csv(results: Sequence[SensitivityResult], names: Sequence[str], path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GSA_HEADER)
        for res in results:
            for i, name in enumerate(names):
                w.writerow(
                    [
                        res.compartment, fmt(res.t), fmt(res.x), fmt(res.y), name,
                        fmt(res.PI_raw[i]), fmt(res.PI[i]), fmt(res.TI_raw[i]), fmt(res.TI[i]),
                        fmt(res.variance), fmt(res.mean), res.status,
                    ]
                )
    return path


def write_design_manifest(design: GsaDesign, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row_id", "block", "param_substituted"] + list(design.names))
        for r, row in enumerate(design.rows):
            s = design.substituted[r]
            w.writerow([r, design.blocks[r], design.names[s] if s >= 0 else ""] + [fmt(v) for v in row])
    return path


# --------------------------------------------------------------------------
# transects and class summaries


@dataclass(frozen=True)
class Transect:
    points: np.ndarray  # (n, 2), ordered outward from the start point
    cells: np.ndarray  # nearest cell per point


def make_transect(
    domain: SpatialDomain, start, direction, n_points: int = 40, step: float | None = None
) -> Transect:
    """Evenly spaced points on a ray from ``start`` to where the ray first
    leaves the domain."""
    start = np.asarray(start, dtype=float)
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    if domain.locate(start)[0] < 0:
        raise TransectError("transect point outside domain")
    step = step or domain.cell_size / 20
    s = 0.0
    while domain.locate(start + (s + step) * d)[0] >= 0:
        s += step
    pts = start + np.linspace(0.0, s, n_points)[:, None] * d
    return Transect(points=pts, cells=domain.locate(pts))


def extract_transect(
    trajectory: Trajectory, domain: SpatialDomain, transect: Transect | np.ndarray, compartment: str
) -> tuple[np.ndarray, np.ndarray]:
    """``(times, values)`` with ``values[t, k]`` the compartment at point ``k``."""
    pts = transect.points if isinstance(transect, Transect) else np.asarray(transect, dtype=float)
    if np.any(domain.locate(pts) < 0):
        raise TransectError("transect point outside domain")
    cells = domain.nearest_cell(pts)
    return np.array(trajectory.times), trajectory.series(compartment)[:, cells]


@dataclass(frozen=True)
class ClassMeans:
    edges: np.ndarray  # (n_classes + 1,)
    counts: np.ndarray  # (n_classes,)
    means: np.ndarray  # (n_classes, ...) NaN for empty classes


def class_means(outputs, parameter_values, bounds, n_classes: int = 4) -> ClassMeans:
    """Mean output per equal-length class of one parameter's range.

    Args:
        outputs: ``(n_runs, ...)`` model outputs.
        parameter_values: ``(n_runs,)`` value of the grouping parameter.
        bounds: ``(low, high)`` of the parameter's variation range.
        n_classes: Number of equal-length classes; 1 gives the overall mean.
    """
    if n_classes < 1:
        raise ValueError("n_classes must be positive")
    outputs = np.asarray(outputs, dtype=float)
    v = np.asarray(parameter_values, dtype=float)
    lo, hi = map(float, bounds)
    edges = np.linspace(lo, hi, n_classes + 1)
    cls = np.clip(np.searchsorted(edges, v, side="right") - 1, 0, n_classes - 1)
    counts = np.bincount(cls, minlength=n_classes)
    means = np.full((n_classes,) + outputs.shape[1:], np.nan)
    for c in range(n_classes):
        if counts[c]:
            means[c] = outputs[cls == c].mean(axis=0)
    return ClassMeans(edges=edges, counts=counts, means=means)
