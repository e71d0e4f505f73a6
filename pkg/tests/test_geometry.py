import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from pathtrace import geometry as geo
from pathtrace.errors import ChordTooShort, DegenerateBBox, DegenerateOverlap, OutOfRange

from oracles import brute_force_crossings, shapely_separations

BOWTIE = [(0, 0), (2, 2), (2, 0), (0, 2)]


def star_5_2():
    return [(math.cos(math.pi / 2 + 4 * math.pi * k / 5), math.sin(math.pi / 2 + 4 * math.pi * k / 5))
            for k in range(6)]


def test_arc_length():
    assert geo.arc_length([(0, 0), (3, 0), (3, 4)]) == 7.0
    assert geo.arc_length([(0, 0), (1, 0)]) == 1.0


@pytest.mark.parametrize("pts, expected", [
    ([(0, 0), (10, 0)], 1.0),
    ([(0, 0), (1, 0), (1, 1)], math.sqrt(2)),
    ([(0, 0), (0, 1), (1, 1), (1, 0)], 3.0),
])
def test_tortuosity_fixtures(pts, expected):
    assert geo.tortuosity(pts) == pytest.approx(expected, abs=1e-9)


def test_tortuosity_rejects_closed_paths():
    with pytest.raises(ChordTooShort):
        geo.tortuosity([(0, 0), (1, 0), (1, 1), (0, 0)])


def test_self_intersection_fixtures():
    assert geo.self_intersections([(0, 0), (1, 1), (2, 0)]) == []
    (c,) = geo.self_intersections(BOWTIE)
    assert (c.i, c.j) == (0, 2)
    assert c.point == pytest.approx((1.0, 1.0))
    assert c.first_pass_vertex == 1 and c.second_pass_vertex == 3


def test_star_has_five_crossings():
    pts = star_5_2()
    expected = brute_force_crossings(pts)
    assert len(expected) == 5
    assert [(c.i, c.j) for c in geo.self_intersections(pts)] == expected


def test_collinear_overlap_is_degenerate():
    with pytest.raises(DegenerateOverlap):
        geo.self_intersections([(0, 0), (4, 0), (4, 1), (2, 0), (6, 0)])


@pytest.mark.parametrize("seed", range(200))
def test_self_intersections_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0, 100, size=(int(rng.integers(2, 21)), 2))
    assert [(c.i, c.j) for c in geo.self_intersections(pts)] == brute_force_crossings(pts)


def test_crossings_sorted_by_second_then_first_pass():
    rng = np.random.default_rng(3)
    pts = rng.uniform(0, 1, size=(20, 2))
    keys = [(c.second_pass_vertex, c.first_pass_vertex) for c in geo.self_intersections(pts)]
    assert keys == sorted(keys) and len(keys) > 5


@pytest.mark.parametrize("t, expected", [(1.0, 0), (1.15, 0), (1.3, 1), (2.0, 2), (8.99, 5), (1.0 - 1e-12, 0)])
def test_bin_tortuosity(t, expected):
    assert geo.bin_tortuosity(t) == expected


@pytest.mark.parametrize("t", [9.0, 9.4, 0.9])
def test_bin_tortuosity_out_of_range(t):
    with pytest.raises(OutOfRange):
        geo.bin_tortuosity(t)


@pytest.mark.parametrize("c, expected", [(0, 0), (1, 1), (2, 2), (3, 2), (4, 3), (5, 3), (6, 4), (8, 4), (9, 5), (12, 5)])
def test_bin_intersections(c, expected):
    assert geo.bin_intersections(c) == expected


def test_bin_intersections_out_of_range():
    with pytest.raises(OutOfRange):
        geo.bin_intersections(13)


@given(st.floats(min_value=1.0, max_value=9.0, exclude_max=True))
def test_tortuosity_bins_partition(t):
    k = geo.bin_tortuosity(t)
    lo, hi = geo.DEFAULT_BINS.tortuosity_range(k)
    assert lo <= t < hi


@given(st.integers(min_value=0, max_value=12))
def test_intersection_bins_partition(c):
    k = geo.bin_intersections(c)
    lo, hi = geo.DEFAULT_BINS.intersection_range(k)
    assert lo <= c <= hi


def test_bins_reject_unsorted_edges():
    with pytest.raises(ValueError):
        geo.BinThresholds(tortuosity_edges=(1.0, 2.0, 2.0))


def test_separation_parallel_segments():
    # segments 0 and 2 are parallel 5 px apart
    pts = [(0, 0), (100, 0), (100, 5), (0, 5)]
    seg, _ = geo.separation_distances(pts)
    assert seg == pytest.approx(5.0)


def test_separation_bowtie_masked():
    pts = [(0, 0), (200, 200), (200, 0), (0, 200)]
    seg, vs = geo.separation_distances(pts, masking_radius=10.0)
    # frozen from the shapely oracle: 2 * 10 * sin(45 deg)
    assert seg == pytest.approx(14.142135623730951, abs=1e-9)
    assert (seg, vs) == pytest.approx(shapely_separations(pts, 10.0), abs=1e-6)


def test_separation_two_points_is_infinite():
    assert geo.separation_distances([(0, 0), (10, 0)]) == (math.inf, math.inf)


@pytest.mark.parametrize("seed", range(30))
def test_separation_matches_shapely(seed):
    rng = np.random.default_rng(1000 + seed)
    pts = rng.uniform(0, 300, size=(int(rng.integers(3, 12)), 2))
    got = geo.separation_distances(pts, masking_radius=15.0)
    assert got == pytest.approx(shapely_separations(pts, 15.0), rel=1e-6, abs=1e-4)


def test_constraints_spacing_formula():
    g = geo.GeometryConfig(glyph_radius_r=9, glyph_padding_p=4)
    assert g.spacing_S == 32
    rep = geo.check_constraints([(100, 300), (200, 300), (300, 300)], g, has_glyphs=True)
    assert geo.RULE_SEGMENT_LENGTH not in rep.rules()


def test_constraints_near_reversal():
    theta = math.radians(178)
    pts = [(100, 300), (400, 300), (400 + 300 * math.cos(theta), 300 + 300 * math.sin(theta))]
    rep = geo.check_constraints(pts, geo.GeometryConfig(reversal_angle_min_deg=20), has_glyphs=False)
    assert geo.RULE_REVERSAL in rep.rules()
    (v,) = [v for v in rep.violations if v.rule == geo.RULE_REVERSAL]
    assert v.indices == (1,) and v.measured == pytest.approx(178) and v.threshold == 160


def test_constraints_seam():
    g = geo.GeometryConfig(seam_avoidance=True, seam_pad_px=12)
    pts = [(100, 100), (336, 150), (600, 100)]
    rep = geo.check_constraints(pts, g, has_glyphs=False)
    assert [v.indices for v in rep.violations if v.rule == geo.RULE_SEAM] == [(1,)]
    rep = geo.check_constraints(pts, geo.GeometryConfig(), has_glyphs=False)
    assert geo.RULE_SEAM not in rep.rules()


def test_constraints_short_segment_and_extent():
    rep = geo.check_constraints([(100, 100), (120, 100), (200, 100)], geo.GeometryConfig(), has_glyphs=True)
    assert set(rep.rules()) >= {geo.RULE_SEGMENT_LENGTH, geo.RULE_EXTENT}
    assert not rep.passed


def test_constraints_glyph_raises_separation_threshold():
    # non-adjacent segments 15 px apart: fine without glyphs (12), too close with glyphs (2r = 18)
    pts = [(40, 100), (600, 100), (600, 115 + 200), (580, 115), (40, 115)]
    g = geo.GeometryConfig(min_vertex_seg_sep_px=0)
    assert geo.RULE_SEGMENT_SEPARATION not in geo.check_constraints(pts, g, has_glyphs=False).rules()
    assert geo.RULE_SEGMENT_SEPARATION in geo.check_constraints(pts, g, has_glyphs=True).rules()


def test_report_passed_iff_no_violations():
    rep = geo.check_constraints([(40, 336), (336, 336), (632, 336)])
    assert rep.passed and rep.violations == []


def well_conditioned(pts, tol=1.0):
    """All orientation tests between non-adjacent segments are far from zero."""
    pts = np.asarray(pts, dtype=float)
    m = len(pts) - 1
    for i in range(m):
        for j in range(i + 2, m):
            a, b, c, d = pts[i], pts[i + 1], pts[j], pts[j + 1]
            for u, v, w in ((a, b, c), (a, b, d), (c, d, a), (c, d, b)):
                if abs((v[0] - u[0]) * (w[1] - u[1]) - (v[1] - u[1]) * (w[0] - u[0])) < tol:
                    return False
    return True


coords = st.floats(min_value=0, max_value=672, allow_nan=False, allow_infinity=False)
polylines = st.lists(st.tuples(coords, coords), min_size=2, max_size=10)


@settings(max_examples=150, deadline=None)
@given(polylines, st.floats(min_value=0.0, max_value=1.0))
def test_constraints_monotone_in_thresholds(pts, relax):
    pts = np.asarray(pts)
    assume(np.all(np.hypot(*np.diff(pts, axis=0).T) > 1e-6))
    try:
        geo.self_intersections(pts)
    except DegenerateOverlap:
        assume(False)
    strict = geo.GeometryConfig(seam_avoidance=True, masking_radius_px=30)
    loose = geo.GeometryConfig(
        min_segment_len_px=strict.min_segment_len_px * relax,
        min_extent_px=strict.min_extent_px * relax,
        min_nonlocal_sep_px=strict.min_nonlocal_sep_px * relax,
        min_vertex_seg_sep_px=strict.min_vertex_seg_sep_px * relax,
        reversal_angle_min_deg=strict.reversal_angle_min_deg * relax,
        seam_avoidance=True,
        seam_pad_px=strict.seam_pad_px * relax,
        masking_radius_px=30,
    )
    for glyphs in (False, True):
        before = {(v.rule, v.indices) for v in geo.check_constraints(pts, strict, glyphs).violations}
        after = {(v.rule, v.indices) for v in geo.check_constraints(pts, loose, glyphs).violations}
        assert after <= before


@settings(max_examples=100, deadline=None)
@given(polylines)
def test_passes_constraints_agrees_with_report(pts):
    pts = np.asarray(pts)
    assume(np.all(np.hypot(*np.diff(pts, axis=0).T) > 1e-6))
    assert geo.passes_constraints(pts) == geo.check_constraints(pts).passed


def test_fit_to_view_examples():
    g = geo.GeometryConfig(view_px=672, margin_px=40)
    sq = geo.fit_to_view([(0, 0), (1, 0), (1, 1), (0, 1)], g)
    assert sq.min(axis=0) == pytest.approx([40, 40]) and sq.max(axis=0) == pytest.approx([632, 632])
    line = geo.fit_to_view([(3, 7), (9, 7)], g)
    assert line[:, 1] == pytest.approx([336, 336])
    assert line[:, 0] == pytest.approx([40, 632])
    again = geo.fit_to_view(sq, g)
    assert np.abs(again - sq).max() <= 1e-9
    with pytest.raises(DegenerateBBox):
        geo.fit_to_view([(1, 1), (1, 1)], g)


@settings(max_examples=200, deadline=None)
@given(polylines)
def test_fit_to_view_invariants(pts):
    pts = np.asarray(pts)
    assume(np.all(np.hypot(*np.diff(pts, axis=0).T) > 1.0))
    assume(geo.chord_length(pts) > 1.0)
    assume(well_conditioned(pts))
    fitted = geo.fit_to_view(pts)
    assert np.abs(geo.fit_to_view(fitted) - fitted).max() <= 1e-9
    assert geo.tortuosity(fitted) == pytest.approx(geo.tortuosity(pts), rel=1e-9)
    np.testing.assert_allclose(geo.turning_angles(fitted), geo.turning_angles(pts), atol=1e-6)
    assert brute_force_crossings(fitted) == brute_force_crossings(pts)


@pytest.mark.parametrize("seed", range(25))
def test_metric_invariance_under_motions(seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0, 100, size=(12, 2))
    th = rng.uniform(0, 2 * np.pi)
    R = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    s = rng.uniform(0.1, 10)
    moved = s * pts @ R.T + rng.uniform(-50, 50, 2)
    assert geo.tortuosity(moved) == pytest.approx(geo.tortuosity(pts), rel=1e-9)
    A = rng.uniform(-2, 2, size=(2, 2))
    if np.linalg.det(A) < 0:
        A[0] *= -1
    assume_ok = abs(np.linalg.det(A)) > 0.1
    if assume_ok:
        assert geo.crossing_count(pts @ A.T + 3.0) == geo.crossing_count(pts)
