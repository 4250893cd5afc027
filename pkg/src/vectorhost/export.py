"""Regular-grid export of scattered values for plotting."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.interpolate import LinearNDInterpolator

from .geometry import SpatialDomain
from .scenarios import fmt


class InterpolationError(ValueError):
    pass


@dataclass(frozen=True)
class HeatmapGrid:
    xs: np.ndarray  # (nx,) node x coordinates
    ys: np.ndarray  # (ny,) node y coordinates
    values: np.ndarray  # (ny, nx), NaN outside the domain or the data hull


def interpolate_scattered(points, values, targets) -> np.ndarray:
    """Piecewise-linear interpolation on the Delaunay triangulation of
    ``points``; NaN outside its convex hull.

    Raises:
        InterpolationError: fewer than three points, or all collinear.
    """
    pts = np.asarray(points, dtype=float)
    vals = np.asarray(values, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] != vals.shape[0]:
        raise ValueError("points must be (n, 2) with one value each")
    if pts.shape[0] < 3 or np.linalg.matrix_rank(pts - pts.mean(axis=0), tol=1e-9 * np.ptp(pts).clip(min=1.0)) < 2:
        raise InterpolationError("degenerate interpolation input")
    # the triangulation is computed in shifted, scaled coordinates so
    # collinearity tests are not spoiled by large offsets
    lo = pts.min(axis=0)
    scale = np.ptp(pts, axis=0).max()
    f = LinearNDInterpolator((pts - lo) / scale, vals, fill_value=np.nan)
    return f((np.asarray(targets, dtype=float) - lo) / scale)


def export_heatmap_grid(
    points,
    values,
    domain: SpatialDomain,
    resolution: float | None = None,
    path: str | Path | None = None,
) -> HeatmapGrid:
    """Interpolate scattered values onto an axis-aligned grid clipped to the
    domain.

    Grid nodes are spaced ``resolution`` apart (default: the cell size),
    starting half a spacing inside the domain's bounding box. Nodes outside
    the domain are missing; so are nodes outside the data's convex hull.
    When ``path`` is given the grid is written as ``x, y, value`` rows with
    an empty value for missing nodes.
    """
    res = float(resolution) if resolution is not None else domain.cell_size
    if not res > 0:
        raise ValueError("resolution must be positive")
    x0, y0, x1, y1 = domain.bounding_box
    xs = np.arange(x0 + res / 2, x1, res)
    ys = np.arange(y0 + res / 2, y1, res)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    out = interpolate_scattered(points, values, nodes)
    out[domain.locate(nodes) < 0] = np.nan
    grid = HeatmapGrid(xs=xs, ys=ys, values=out.reshape(X.shape))
    if path is not None:
        write_heatmap_csv(grid, path)
    return grid


def heatmap_rows(grid: HeatmapGrid):
    for j, y in enumerate(grid.ys):
        for i, x in enumerate(grid.xs):
            v = grid.values[j, i]
            yield fmt(x), fmt(y), "" if np.isnan(v) else fmt(v)


def write_heatmap_csv(grid: HeatmapGrid, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "value"])
        w.writerows(heatmap_rows(grid))
    return path
