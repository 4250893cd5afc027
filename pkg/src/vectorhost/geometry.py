"""Rasterized spatial domains.

A domain is a uniform grid of square cells together with a boolean mask
selecting the cells that belong to the study region. Cells inside the region
are addressed by a compact index ``0..n_cells-1`` (row-major over the grid),
which is the layout used by every per-cell field in the package.

Two mask sources are supported:

* polygon rings in physical coordinates (a cell belongs to the region when its
  center lies inside, or on the edge of, at least one ring);
* ASCII mask grids with a small header, see :func:`read_ascii_mask`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

_EDGE_TOL = 1e-9


class GeometryError(ValueError):
    """Raised for empty or malformed domain specifications."""


class NonpositiveDiffusionError(ValueError):
    """Raised when a diffusion field is not strictly positive."""

    def __init__(self, message: str = "nonpositive diffusion") -> None:
        super().__init__(message)


@dataclass(frozen=True, eq=False)
class SpatialDomain:
    """Masked square grid.

    Attributes:
        cell_size: Edge length of one square cell.
        mask: ``(nrows, ncols)`` boolean array, row 0 at the lowest ``y``.
        origin: ``(x, y)`` of the lower-left grid corner.
        interior_cells: Compact indices of masked-in cells whose four
            neighbours are all masked in.
        boundary_cells: Compact indices of masked-in cells with at least one
            masked-out (or off-grid) neighbour.
    """

    cell_size: float
    mask: np.ndarray
    origin: tuple[float, float] = (0.0, 0.0)
    interior_cells: np.ndarray = field(init=False, repr=False)
    boundary_cells: np.ndarray = field(init=False, repr=False)
    index_grid: np.ndarray = field(init=False, repr=False)
    cell_rc: np.ndarray = field(init=False, repr=False)
    faces: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if not self.cell_size > 0:
            raise GeometryError("invalid geometry: cell_size must be positive")
        mask = np.array(self.mask, dtype=bool)
        if mask.ndim != 2:
            raise GeometryError("invalid geometry: mask must be 2-D")
        if not mask.any():
            raise GeometryError("empty domain")
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

        rows, cols = np.nonzero(mask)
        index_grid = np.full(mask.shape, -1, dtype=np.int64)
        index_grid[rows, cols] = np.arange(rows.size)

        padded = np.pad(mask, 1, constant_values=False)
        full_nbrs = (
            padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
        )[rows, cols]

        # faces between horizontally and vertically adjacent masked-in cells
        right = mask[:, :-1] & mask[:, 1:]
        r0, c0 = np.nonzero(right)
        up = mask[:-1, :] & mask[1:, :]
        r1, c1 = np.nonzero(up)
        faces = np.concatenate(
            [
                np.stack([index_grid[r0, c0], index_grid[r0, c0 + 1]], axis=1),
                np.stack([index_grid[r1, c1], index_grid[r1 + 1, c1]], axis=1),
            ]
        )

        for name, value in (
            ("index_grid", index_grid),
            ("cell_rc", np.stack([rows, cols], axis=1)),
            ("interior_cells", np.flatnonzero(full_nbrs)),
            ("boundary_cells", np.flatnonzero(~full_nbrs)),
            ("faces", faces),
        ):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape

    @property
    def n_cells(self) -> int:
        return int(self.cell_rc.shape[0])

    @property
    def cell_area(self) -> float:
        return self.cell_size**2

    @property
    def bounding_box(self) -> tuple[float, float, float, float]:
        """Physical extents ``(xmin, ymin, xmax, ymax)`` of the whole grid."""
        nrows, ncols = self.shape
        x0, y0 = self.origin
        return (x0, y0, x0 + ncols * self.cell_size, y0 + nrows * self.cell_size)

    @property
    def cell_centers(self) -> np.ndarray:
        """``(n_cells, 2)`` array of cell-center coordinates."""
        h = self.cell_size
        x = self.origin[0] + (self.cell_rc[:, 1] + 0.5) * h
        y = self.origin[1] + (self.cell_rc[:, 0] + 0.5) * h
        return np.stack([x, y], axis=1)

    def locate(self, points: np.ndarray) -> np.ndarray:
        """Compact index of the cell containing each point, ``-1`` if outside."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        h = self.cell_size
        col = np.floor((pts[:, 0] - self.origin[0]) / h).astype(np.int64)
        row = np.floor((pts[:, 1] - self.origin[1]) / h).astype(np.int64)
        nrows, ncols = self.shape
        ok = (row >= 0) & (row < nrows) & (col >= 0) & (col < ncols)
        out = np.full(pts.shape[0], -1, dtype=np.int64)
        out[ok] = self.index_grid[row[ok], col[ok]]
        return out

    def nearest_cell(self, points: np.ndarray) -> np.ndarray:
        """Compact index of the nearest masked-in cell center for each point."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        centers = self.cell_centers
        d2 = ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        return np.argmin(d2, axis=1)

    def to_grid(self, values: np.ndarray, fill: float = np.nan) -> np.ndarray:
        """Scatter a per-cell field back onto the full ``(nrows, ncols)`` grid."""
        grid = np.full(self.shape, fill, dtype=float)
        grid[self.cell_rc[:, 0], self.cell_rc[:, 1]] = values
        return grid

    def integrate(self, values: np.ndarray) -> float:
        return float(np.sum(values) * self.cell_area)


@dataclass(frozen=True)
class DomainMeasures:
    """Lebesgue measure of the domain and its measure under ``dx / D(x)``."""

    lebesgue: float
    mu: float


def domain_measures(domain: SpatialDomain, D) -> DomainMeasures:
    """Return ``|Omega|`` and ``|Omega|_mu`` for a diffusion field ``D``."""
    d = np.broadcast_to(np.asarray(D, dtype=float), (domain.n_cells,))
    if not np.all(d > 0):
        raise NonpositiveDiffusionError()
    area = domain.cell_area
    return DomainMeasures(lebesgue=domain.n_cells * area, mu=float(np.sum(area / d)))


# --------------------------------------------------------------------------
# polygons


def _as_ring(ring: Sequence[Sequence[float]]) -> np.ndarray:
    pts = np.asarray(ring, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise GeometryError("invalid geometry: ring must be a list of (x, y) vertices")
    if len(pts) > 1 and np.allclose(pts[0], pts[-1]):
        pts = pts[:-1]
    if len(pts) < 3:
        raise GeometryError("invalid geometry: ring needs at least 3 vertices")
    return pts


def _orient(a, b, c) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _segments_intersect(p1, p2, q1, q2) -> bool:
    d1 = _orient(q1, q2, p1)
    d2 = _orient(q1, q2, p2)
    d3 = _orient(p1, p2, q1)
    d4 = _orient(p1, p2, q2)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and d1 and d2 and d3 and d4:
        return True

    def on_seg(a, b, c, d) -> bool:
        return d == 0 and min(a[0], b[0]) <= c[0] <= max(a[0], b[0]) and min(a[1], b[1]) <= c[1] <= max(a[1], b[1])

    return on_seg(q1, q2, p1, d1) or on_seg(q1, q2, p2, d2) or on_seg(p1, p2, q1, d3) or on_seg(p1, p2, q2, d4)


def validate_ring(ring: np.ndarray) -> None:
    """Raise :class:`GeometryError` if the ring is degenerate or self-intersecting."""
    n = len(ring)
    x, y = ring[:, 0], ring[:, 1]
    area = 0.5 * (np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
    if abs(area) <= 0:
        raise GeometryError("invalid geometry: zero-area ring")
    for i in range(n):
        a, b = ring[i], ring[(i + 1) % n]
        if np.array_equal(a, b):
            raise GeometryError("invalid geometry: repeated vertex")
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or j == (i + 1) % n:
                continue
            if _segments_intersect(a, b, ring[j], ring[(j + 1) % n]):
                raise GeometryError("invalid geometry: self-intersecting ring")


def points_in_ring(points: np.ndarray, ring: np.ndarray) -> np.ndarray:
    """Even-odd ray casting; points on an edge count as inside."""
    px = points[:, 0][:, None]
    py = points[:, 1][:, None]
    x1, y1 = ring[:, 0][None, :], ring[:, 1][None, :]
    x2, y2 = np.roll(ring[:, 0], -1)[None, :], np.roll(ring[:, 1], -1)[None, :]

    crosses = (y1 > py) != (y2 > py)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_at = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
    inside = np.count_nonzero(crosses & (px < x_at), axis=1) % 2 == 1

    # distance to each segment, for the edge tie rule
    dx, dy = x2 - x1, y2 - y1
    seg_len2 = dx * dx + dy * dy
    t = np.clip(((px - x1) * dx + (py - y1) * dy) / seg_len2, 0.0, 1.0)
    dist2 = (x1 + t * dx - px) ** 2 + (y1 + t * dy - py) ** 2
    scale = max(1.0, float(np.abs(ring).max()))
    on_edge = (dist2 <= (_EDGE_TOL * scale) ** 2).any(axis=1)
    return inside | on_edge


def _count_cells(extent: float, cell_size: float) -> int:
    return max(1, int(np.ceil(extent / cell_size - 1e-9)))


def rasterize_polygons(rings: Sequence[Sequence[Sequence[float]]], cell_size: float) -> SpatialDomain:
    """Rasterize the union of polygon rings onto a square grid.

    The grid origin is the lower-left corner of the rings' bounding box.
    """
    if not cell_size > 0:
        raise GeometryError("invalid geometry: cell_size must be positive")
    parsed = [_as_ring(r) for r in rings]
    if not parsed:
        raise GeometryError("empty domain")
    for ring in parsed:
        validate_ring(ring)
    allpts = np.concatenate(parsed)
    xmin, ymin = allpts.min(axis=0)
    xmax, ymax = allpts.max(axis=0)
    ncols = _count_cells(xmax - xmin, cell_size)
    nrows = _count_cells(ymax - ymin, cell_size)

    jj, ii = np.meshgrid(np.arange(ncols), np.arange(nrows))
    centers = np.stack(
        [xmin + (jj.ravel() + 0.5) * cell_size, ymin + (ii.ravel() + 0.5) * cell_size], axis=1
    )
    inside = np.zeros(len(centers), dtype=bool)
    for ring in parsed:
        inside |= points_in_ring(centers, ring)
    if not inside.any():
        raise GeometryError("empty domain")
    return SpatialDomain(cell_size=float(cell_size), mask=inside.reshape(nrows, ncols), origin=(xmin, ymin))


# --------------------------------------------------------------------------
# ASCII masks


def parse_ascii_mask(text: str) -> SpatialDomain:
    """Parse an ASCII mask.

    Format::

        nrows 3
        ncols 4
        cell_size 0.5
        origin 0.0 0.0
        0110
        1111
        0110

    Header keys may appear in any order. Data rows are listed top (largest
    ``y``) to bottom, like a printed map; ``origin`` is the lower-left corner.
    """
    header: dict[str, list[str]] = {}
    rows: list[str] = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if set(line) <= {"0", "1"}:
            rows.append(line)
        else:
            key, *vals = line.split()
            header[key.lower()] = vals
    missing = {"nrows", "ncols", "cell_size", "origin"} - header.keys()
    if missing:
        raise GeometryError(f"invalid geometry: ASCII mask header missing {sorted(missing)}")
    nrows, ncols = int(header["nrows"][0]), int(header["ncols"][0])
    if len(rows) != nrows or any(len(r) != ncols for r in rows):
        raise GeometryError("invalid geometry: ASCII mask body does not match nrows/ncols")
    grid = np.array([[c == "1" for c in r] for r in rows], dtype=bool)[::-1]
    x0, y0 = (float(v) for v in header["origin"][:2])
    return SpatialDomain(cell_size=float(header["cell_size"][0]), mask=grid, origin=(x0, y0))


def read_ascii_mask(path: str | Path) -> SpatialDomain:
    return parse_ascii_mask(Path(path).read_text(encoding="utf-8"))


def format_ascii_mask(domain: SpatialDomain) -> str:
    lines = [
        f"nrows {domain.shape[0]}",
        f"ncols {domain.shape[1]}",
        f"cell_size {domain.cell_size!r}",
        f"origin {domain.origin[0]!r} {domain.origin[1]!r}",
    ]
    lines += ["".join("1" if v else "0" for v in row) for row in domain.mask[::-1]]
    return "\n".join(lines) + "\n"


def build_domain(mask_spec, cell_size: float | None = None) -> SpatialDomain:
    """Build a :class:`SpatialDomain` from polygons or an ASCII mask.

    Args:
        mask_spec: A list of rings (each a list of ``(x, y)`` vertices), a
            single ring, ASCII mask text, or a path to an ASCII mask file.
        cell_size: Required for polygons; ignored for ASCII masks, whose
            header carries the cell size.
    """
    if isinstance(mask_spec, Path) or (isinstance(mask_spec, str) and "\n" not in mask_spec):
        return read_ascii_mask(mask_spec)
    if isinstance(mask_spec, str):
        return parse_ascii_mask(mask_spec)
    if cell_size is None:
        raise GeometryError("invalid geometry: cell_size is required for polygon input")
    rings = list(mask_spec)
    if rings and np.asarray(rings[0], dtype=float).ndim == 1:
        rings = [rings]
    return rasterize_polygons(rings, cell_size)


# --------------------------------------------------------------------------
# bundled region

def mediterranean_arc() -> list[list[tuple[float, float]]]:
    """Simplified outline (km) of an arc of Mediterranean coastal departments.

    The eastern tip sits near the border where introductions are simulated,
    see :data:`INTRODUCTION_POINT`. At ``cell_size=10`` the arc rasterizes to
    roughly 600 cells.
    """
    text = resources.files("vectorhost.data").joinpath("mediterranean_arc.csv").read_text("utf-8")
    ring = []
    for line in text.splitlines()[1:]:
        if line.strip():
            x, y = line.split(",")
            ring.append((float(x), float(y)))
    return [ring]


INTRODUCTION_POINT = (455.0, 150.0)
