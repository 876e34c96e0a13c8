import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from icecontour.geometry import (COASTAL, RADIAL, GeometryError, RegionConfig, RegionGeometry,
                                 build_region_geometry, contour_from_lengths, length_from_proportion,
                                 lengths_from_field, line_states, load_region_config,
                                 points_in_polygon, proportion_from_field, proportion_from_length,
                                 rasterize, snap_to_boundary)
from icecontour.grid import BinaryField, GridSpec

from conftest import coastal_mask, radial_mask


def spans_geometry(ocean, land):
    """A one-line geometry with the given ocean and land spans."""
    g = GridSpec(4, 4)
    return RegionGeometry(1, COASTAL, g, np.zeros((1, 2)), np.array([np.pi / 2]), 0.25,
                          (np.asarray(ocean, float),), (np.asarray(land, float).reshape(-1, 2),),
                          ((np.zeros(0, int), np.zeros(0, int)),))


def test_length_crosses_land_before_the_edge_segment():
    geom = spans_geometry([[0, 4], [6, 12]], [[4, 6]])
    assert length_from_proportion(geom, 0, 0.5) == 7.0
    assert length_from_proportion(geom, 0, 0.4) == 4.0     # edge at the end of the first run
    assert length_from_proportion(geom, 0, 0.0) == 0.0
    assert length_from_proportion(geom, 0, 1.0) == 12.0
    with pytest.raises(ValueError):
        length_from_proportion(geom, 0, 1.5)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 1))
def test_proportion_length_round_trip(pi):
    geom = spans_geometry([[0, 4], [6, 12], [13, 20]], [[4, 6], [12, 13]])
    y = length_from_proportion(geom, 0, pi)
    assert proportion_from_length(geom, 0, y) == pytest.approx(pi, abs=1e-12)


def test_coastal_lines_sit_at_column_centres_and_trim_land():
    m = coastal_mask(8, 4)
    geom = build_region_geometry(m, 1, 4, COASTAL, angle=np.pi / 2, coast=((0, 0), (100, 0)))
    # the anchor advances over the land row to the coast
    assert np.allclose(geom.anchors, [[12.5, 25], [37.5, 25], [62.5, 25], [87.5, 25]])
    assert np.allclose(geom.line_length, 175.0)
    assert np.allclose(geom.ocean_length, 175.0)


def test_island_becomes_a_land_run():
    m = coastal_mask(8, 4, islands=[(3, 5, 1, 2)])
    geom = build_region_geometry(m, 1, 4, COASTAL, angle=np.pi / 2, coast=((0, 25), (100, 25)))
    r, h = geom.segments(1)
    assert np.allclose(r, [50, 75]) and np.allclose(h, [50])


def test_radial_lines_spread_evenly():
    m = radial_mask(20)
    geom = build_region_geometry(m, 1, 8, RADIAL, center=(250.0, 250.0))
    assert np.allclose(np.diff(geom.angles), np.pi / 4)
    assert np.all(geom.ocean_length > 0)


def test_geometry_errors():
    m = coastal_mask(6, 4)
    with pytest.raises(GeometryError):
        build_region_geometry(m, 5, 4, COASTAL, angle=np.pi / 2, coast=((0, 25), (100, 25)))
    with pytest.raises(GeometryError):
        build_region_geometry(m, 1, 4, RADIAL, center=(12.5, 12.5))     # centre on land
    with pytest.raises(GeometryError):
        build_region_geometry(m, 1, 4, COASTAL, angle=-np.pi / 2, coast=((0, 25), (100, 25)))


def _column_field(mask, heights):
    """Ice in each column from the coast up to ``heights[c]`` rows above it."""
    v = np.where(mask.ocean, 0.0, np.nan)
    for c, h in enumerate(heights):
        v[1:1 + h, c] = np.where(mask.ocean[1:1 + h, c], 1.0, np.nan)
    return BinaryField(mask.grid, v)


def test_field_to_contour_to_raster_is_exact_on_aligned_lines(rng):
    m = coastal_mask(12, 10, islands=[(4, 6, 3, 5)])
    geom = build_region_geometry(m, 1, 10, COASTAL, angle=np.pi / 2, coast=((0, 25), (250, 25)))
    f = _column_field(m, rng.integers(0, 12, 10))
    lengths = lengths_from_field(geom, f)
    back = rasterize(contour_from_lengths(geom, lengths), m.grid, m, 1)
    assert np.allclose(lengths_from_field(geom, back), lengths)


def test_rasterize_scope_and_missing_values(small_coast):
    poly = contour_from_lengths(
        build_region_geometry(small_coast, 1, 10, COASTAL, angle=np.pi / 2,
                              coast=((0, 25), (250, 25))), np.full(10, 100.0))
    f = rasterize(poly, small_coast.grid, small_coast, 1)
    assert np.isnan(f.values[0]).all()
    assert f.values[1:5].sum() == 40 and f.values[5:].sum() == 0


def test_points_on_edges_count_as_inside():
    sq = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float)
    inside = points_in_polygon([0.5, 1.0, 0.0, 1.5], [0.5, 0.5, 1.0, 0.5], sq)
    assert inside.tolist() == [True, True, True, False]


def test_snap_moves_edges_forward_only():
    geom = spans_geometry([[0, 4], [6, 12]], [[4, 6]])
    assert snap_to_boundary(geom, [3.9], snap_dist=0.5)[0] == 4.0
    assert snap_to_boundary(geom, [3.0], snap_dist=0.5)[0] == 3.0
    assert snap_to_boundary(geom, [11.8], snap_dist=0.5)[0] == 12.0
    assert snap_to_boundary(geom, [4.0], snap_dist=0.5)[0] == 4.0


def test_proportion_from_field_counts_ice_samples(small_coast):
    geom = build_region_geometry(small_coast, 1, 10, COASTAL, angle=np.pi / 2,
                                 coast=((0, 25), (250, 25)))
    f = _column_field(small_coast, [11] * 5 + [0] * 5)
    assert np.allclose(proportion_from_field(geom, f), [1] * 5 + [0] * 5)


def test_line_states_flag_fixed_lines():
    geom = spans_geometry([[0, 10]], [])
    (s,) = line_states(geom, [0.0], fixed=[0])
    assert s.fixed and s.length == 0.0 and s.transformed == pytest.approx(np.log(0.01 / 0.99))


def test_region_config_file(tmp_path):
    p = tmp_path / "r.json"
    p.write_text('{"regions": [{"id": 2, "kind": "radial", "n_lines": 12, "center": [1, 2]}]}')
    (rc,) = load_region_config(p)
    assert rc.region == 2 and rc.kind == RADIAL and rc.center == (1.0, 2.0)
    assert RegionConfig.from_dict(rc.to_dict()) == rc
    with pytest.raises(FileNotFoundError, match="missing.json"):
        load_region_config(tmp_path / "missing.json")
