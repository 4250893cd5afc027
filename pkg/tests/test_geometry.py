from __future__ import annotations

import numpy as np
import pytest
import shapely
from hypothesis import given, settings
from hypothesis import strategies as st
from shapely.geometry import Point, Polygon

from vectorhost.geometry import (
    GeometryError,
    NonpositiveDiffusionError,
    SpatialDomain,
    build_domain,
    domain_measures,
    format_ascii_mask,
    mediterranean_arc,
    parse_ascii_mask,
)

UNIT = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]


def shapely_rasterize(rings, cell_size):
    """Independent rasterizer: cell centers covered by the union of polygons."""
    pts = np.concatenate([np.asarray(r, dtype=float) for r in rings])
    xmin, ymin = pts.min(axis=0)
    xmax, ymax = pts.max(axis=0)
    ncols = int(np.ceil((xmax - xmin) / cell_size - 1e-9))
    nrows = int(np.ceil((ymax - ymin) / cell_size - 1e-9))
    union = shapely.union_all([Polygon(r) for r in rings])
    mask = np.zeros((nrows, ncols), dtype=bool)
    for i in range(nrows):
        for j in range(ncols):
            c = Point(xmin + (j + 0.5) * cell_size, ymin + (i + 0.5) * cell_size)
            mask[i, j] = union.covers(c)
    return mask


def test_unit_square_counts():
    dom = build_domain([UNIT], 0.1)
    assert dom.shape == (10, 10)
    assert dom.n_cells == 100
    assert len(dom.boundary_cells) == 36
    assert len(dom.interior_cells) == 64


def test_interior_boundary_partition():
    dom = build_domain(mediterranean_arc(), 20.0)
    both = np.concatenate([dom.interior_cells, dom.boundary_cells])
    assert np.array_equal(np.sort(both), np.arange(dom.n_cells))
    assert len(np.intersect1d(dom.interior_cells, dom.boundary_cells)) == 0


def test_l_shape_three_cells():
    ring = [(0, 0), (1, 0), (1, 0.5), (0.5, 0.5), (0.5, 1), (0, 1)]
    dom = build_domain([ring], 0.5)
    assert dom.n_cells == 3
    assert dom.cell_area == 0.25


def test_mediterranean_arc_matches_independent_rasterizer():
    rings = mediterranean_arc()
    dom = build_domain(rings, 10.0)
    assert 500 <= dom.n_cells <= 700
    assert np.array_equal(dom.mask, shapely_rasterize(rings, 10.0))


def test_self_intersecting_polygon_rejected():
    bowtie = [(0, 0), (1, 1), (1, 0), (0, 1)]
    with pytest.raises(GeometryError, match="invalid geometry"):
        build_domain([bowtie], 0.1)


def test_empty_domain():
    sliver = [(0, 0), (0.1, 0), (0, 0.1)]
    with pytest.raises(GeometryError, match="empty domain"):
        build_domain([sliver], 1.0)
    with pytest.raises(GeometryError, match="empty domain"):
        SpatialDomain(1.0, np.zeros((3, 3), dtype=bool))


def test_build_is_deterministic():
    a = build_domain(mediterranean_arc(), 15.0)
    b = build_domain(mediterranean_arc(), 15.0)
    assert np.array_equal(a.mask, b.mask)
    assert np.array_equal(a.faces, b.faces)


def test_measures_constant_d(unit_square):
    m = domain_measures(unit_square, 1.0)
    assert m.lebesgue == pytest.approx(1.0, abs=1e-14)
    assert m.mu == pytest.approx(1.0, abs=1e-14)
    m = domain_measures(unit_square, 2.0)
    assert (m.lebesgue, m.mu) == pytest.approx((1.0, 0.5), abs=1e-14)


def test_measures_variable_d_against_integral():
    for n in (10, 20, 40):
        dom = build_domain([UNIT], 1.0 / n)
        D = 1.0 + dom.cell_centers[:, 0]
        err = abs(domain_measures(dom, D).mu - np.log(2.0))
        # midpoint rule for 1/(1+x): error bounded by h^2 max|f''| / 24 = h^2 / 12
        assert err <= dom.cell_size**2 / 12


def test_nonpositive_diffusion(unit_square):
    D = np.ones(unit_square.n_cells)
    D[7] = 0.0
    with pytest.raises(NonpositiveDiffusionError, match="nonpositive diffusion"):
        domain_measures(unit_square, D)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.1, 10.0), st.floats(1e-3, 1e3))
def test_mu_homogeneous_in_d(base, c):
    dom = build_domain(mediterranean_arc(), 40.0)
    D = base * (1.0 + dom.cell_centers[:, 0] / 500.0)
    m1 = domain_measures(dom, D)
    m2 = domain_measures(dom, c * D)
    assert m2.lebesgue == m1.lebesgue
    assert m2.mu == pytest.approx(m1.mu / c, rel=1e-13)


@st.composite
def star_polygons(draw):
    n = draw(st.integers(3, 9))
    angles = np.sort(draw(st.lists(st.floats(0, 2 * np.pi, exclude_max=True), min_size=n, max_size=n, unique=True)))
    radii = draw(st.lists(st.floats(0.3, 1.0), min_size=n, max_size=n))
    if np.min(np.diff(np.append(angles, angles[0] + 2 * np.pi))) < 0.05:
        angles = np.linspace(0, 2 * np.pi, n, endpoint=False)
    return [(float(r * np.cos(a)), float(r * np.sin(a))) for r, a in zip(radii, angles)]


@settings(max_examples=60, deadline=None)
@given(star_polygons(), st.sampled_from([0.4, 0.25, 0.2, 0.1]))
def test_refinement_keeps_strictly_interior_cells(ring, h):
    """Halving the cell size keeps every region a coarse interior cell
    center stood for: its four fine sub-cells are all masked in whenever the
    center lies farther than half a fine diagonal from the boundary."""
    poly = Polygon(ring)
    if not poly.is_valid or poly.area < 1e-3:
        return
    try:
        coarse = build_domain([ring], h)
    except GeometryError:
        return
    fine = build_domain([ring], h / 2)
    assert fine.origin == coarse.origin
    margin = (h / 2) * np.sqrt(2) / 2
    for (x, y) in coarse.cell_centers:
        if poly.exterior.distance(Point(x, y)) <= margin + 1e-9:
            continue
        for dx in (-h / 4, h / 4):
            for dy in (-h / 4, h / 4):
                assert fine.locate(np.array([[x + dx, y + dy]]))[0] >= 0


def test_ascii_round_trip():
    text = "nrows 3\nncols 4\ncell_size 0.5\norigin 1.0 2.0\n0110\n1111\n0100\n"
    dom = parse_ascii_mask(text)
    assert dom.n_cells == 7
    # first data row is the top of the map
    assert dom.mask[2].tolist() == [False, True, True, False]
    assert dom.mask[0].tolist() == [False, True, False, False]
    again = parse_ascii_mask(format_ascii_mask(dom))
    assert np.array_equal(again.mask, dom.mask)
    assert again.origin == dom.origin and again.cell_size == dom.cell_size


def test_ascii_file_input(tmp_path):
    path = tmp_path / "mask.txt"
    path.write_text("nrows 2\nncols 2\ncell_size 1\norigin 0 0\n11\n10\n")
    dom = build_domain(path)
    assert dom.n_cells == 3
    assert build_domain(str(path)).n_cells == 3


def test_locate_and_nearest(unit_square):
    idx = unit_square.locate(np.array([[0.05, 0.05], [0.95, 0.15], [1.5, 0.5]]))
    assert idx.tolist() == [0, 19, -1]
    assert unit_square.nearest_cell(np.array([[1.5, 0.05]]))[0] == 9


def test_integrate(unit_square):
    assert unit_square.integrate(np.full(100, 3.0)) == pytest.approx(3.0, rel=1e-14)
