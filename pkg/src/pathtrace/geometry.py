"""Geometric kernel: path metrics, self-intersections, binning and the
render-aware acceptance gate.

Polylines are plain ``(n, 2)`` float arrays in view-space pixels (y grows
downwards, as in SVG). Every function here is pure.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import (
    ChordTooShort,
    DegenerateBBox,
    DegenerateOverlap,
    InvalidPolyline,
    OutOfRange,
)

EPS = 1e-9

TORTUOSITY_EDGES = (1.0, 1.3, 2.0, 3.0, 4.5, 6.5, 9.0)
INTERSECTION_EDGES = (0, 1, 2, 4, 6, 9, 13)


@dataclass(frozen=True)
class BinThresholds:
    tortuosity_edges: tuple = TORTUOSITY_EDGES
    intersection_edges: tuple = INTERSECTION_EDGES

    def __post_init__(self):
        for edges in (self.tortuosity_edges, self.intersection_edges):
            if any(b <= a for a, b in zip(edges, edges[1:])):
                raise ValueError(f"bin edges must be strictly increasing: {edges}")

    @property
    def n_tortuosity_bins(self):
        return len(self.tortuosity_edges) - 1

    @property
    def n_intersection_bins(self):
        return len(self.intersection_edges) - 1

    def tortuosity_range(self, tbin):
        return self.tortuosity_edges[tbin], self.tortuosity_edges[tbin + 1]

    def intersection_range(self, sbin):
        """Inclusive ``(lo, hi)`` crossing counts of a regime."""
        return self.intersection_edges[sbin], self.intersection_edges[sbin + 1] - 1


DEFAULT_BINS = BinThresholds()


@dataclass(frozen=True)
class GeometryConfig:
    view_px: int = 672
    margin_px: float = 40.0
    glyph_radius_r: float = 9.0
    glyph_padding_p: float = 4.0
    min_segment_len_px: float = 20.0
    min_extent_px: float = 336.0
    min_nonlocal_sep_px: float = 12.0
    min_vertex_seg_sep_px: float = 16.0
    reversal_angle_min_deg: float = 20.0
    masking_radius_px: float | None = None
    seam_avoidance: bool = False
    seam_pitch_px: float = 336.0
    seam_pad_px: float = 12.0
    epsilon_chord: float = 1e-6

    def __post_init__(self):
        for name in (
            "margin_px", "glyph_radius_r", "glyph_padding_p", "min_segment_len_px",
            "min_extent_px", "min_nonlocal_sep_px", "min_vertex_seg_sep_px",
            "reversal_angle_min_deg", "seam_pitch_px", "seam_pad_px",
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.masking_radius_px is not None and self.masking_radius_px < 0:
            raise ValueError("masking_radius_px must be >= 0")

    @property
    def spacing_S(self):
        """Minimum glyph center-to-center spacing ``2r + p + 10``."""
        return 2 * self.glyph_radius_r + self.glyph_padding_p + 10.0

    def masking_radius(self, has_glyphs=True):
        if self.masking_radius_px is not None:
            return self.masking_radius_px
        return 1.5 * self.spacing_S if has_glyphs else 24.0

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True)
class Crossing:
    i: int
    j: int
    point: tuple

    @property
    def first_pass_vertex(self):
        return self.i + 1

    @property
    def second_pass_vertex(self):
        return self.j + 1


@dataclass(frozen=True)
class Violation:
    rule: str
    indices: tuple
    measured: float
    threshold: float


@dataclass
class AcceptanceReport:
    violations: list = field(default_factory=list)

    @property
    def passed(self):
        return not self.violations

    def rules(self):
        return sorted({v.rule for v in self.violations})


# rule ids used in AcceptanceReport
RULE_SEGMENT_LENGTH = "min_segment_length"
RULE_EXTENT = "min_extent"
RULE_SEGMENT_SEPARATION = "segment_separation"
RULE_VERTEX_SPACING = "vertex_spacing"
RULE_VERTEX_SEGMENT = "vertex_segment_separation"
RULE_REVERSAL = "near_reversal"
RULE_SEAM = "seam_clearance"
RULE_OVERLAP = "collinear_overlap"


def as_polyline(points):
    """Validate and return ``points`` as a float ``(n, 2)`` array."""
    p = np.asarray(points, dtype=float)
    if p.ndim != 2 or p.shape[1] != 2:
        raise InvalidPolyline(f"expected an (n, 2) array, got shape {p.shape}")
    if len(p) < 2:
        raise InvalidPolyline("a polyline needs at least 2 vertices")
    if not np.all(np.isfinite(p)):
        raise InvalidPolyline("non-finite coordinate")
    seg = np.diff(p, axis=0)
    if np.any(np.hypot(seg[:, 0], seg[:, 1]) <= 0):
        raise InvalidPolyline("consecutive vertices coincide")
    return p


def segment_lengths(p):
    d = np.diff(np.asarray(p, dtype=float), axis=0)
    return np.hypot(d[:, 0], d[:, 1])


def arc_length(p):
    return float(segment_lengths(p).sum())


def chord_length(p):
    p = np.asarray(p, dtype=float)
    return float(math.hypot(*(p[-1] - p[0])))


def tortuosity(p, epsilon_chord=1e-6):
    """Sinuosity: arc length over the endpoint chord."""
    chord = chord_length(p)
    if chord < epsilon_chord:
        raise ChordTooShort(f"endpoint chord {chord:.3g} px below {epsilon_chord}")
    return arc_length(p) / chord


def turning_angles(p):
    """Deviation from straight at each interior vertex, degrees (0 = straight,
    180 = full reversal)."""
    d = np.diff(np.asarray(p, dtype=float), axis=0)
    a, b = d[:-1], d[1:]
    cross = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
    dot = (a * b).sum(axis=1)
    return np.degrees(np.abs(np.arctan2(cross, dot)))


def _orient(a, b, c):
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _sign(v):
    if v > EPS:
        return 1
    if v < -EPS:
        return -1
    return 0


def _collinear_overlap(a, b, c, d):
    # all four points collinear: project on the dominant axis
    k = 0 if abs(b[0] - a[0]) >= abs(b[1] - a[1]) else 1
    lo1, hi1 = sorted((a[k], b[k]))
    lo2, hi2 = sorted((c[k], d[k]))
    return min(hi1, hi2) - max(lo1, lo2) > EPS


def segment_crossing(a, b, c, d):
    """Proper (transverse, interior) intersection point of ab and cd, or None.

    Raises DegenerateOverlap for collinear segments sharing positive length.
    """
    o1, o2 = _sign(_orient(a, b, c)), _sign(_orient(a, b, d))
    o3, o4 = _sign(_orient(c, d, a)), _sign(_orient(c, d, b))
    if o1 == o2 == o3 == o4 == 0:
        if _collinear_overlap(a, b, c, d):
            raise DegenerateOverlap("collinear segments overlap")
        return None
    if o1 * o2 < 0 and o3 * o4 < 0:
        rx, ry = b[0] - a[0], b[1] - a[1]
        sx, sy = d[0] - c[0], d[1] - c[1]
        t = ((c[0] - a[0]) * sy - (c[1] - a[1]) * sx) / (rx * sy - ry * sx)
        return (a[0] + t * rx, a[1] + t * ry)
    return None


def self_intersections(p):
    """All transverse crossings between non-adjacent segments.

    Candidate pairs come from a sweep over x-sorted segment extents; each
    candidate is then decided with orientation tests. The result is sorted
    by ``(second_pass_vertex, first_pass_vertex)``.
    """
    p = np.asarray(p, dtype=float)
    pts = [tuple(map(float, v)) for v in p]
    m = len(pts) - 1
    xlo = [min(pts[k][0], pts[k + 1][0]) for k in range(m)]
    xhi = [max(pts[k][0], pts[k + 1][0]) for k in range(m)]
    order = sorted(range(m), key=lambda k: xlo[k])
    active = []
    found = []
    for k in order:
        active = [a for a in active if xhi[a] >= xlo[k] - EPS]
        for a in active:
            i, j = (a, k) if a < k else (k, a)
            if j - i < 2:
                continue
            hit = segment_crossing(pts[i], pts[i + 1], pts[j], pts[j + 1])
            if hit is not None:
                found.append(Crossing(i, j, hit))
        active.append(k)
    found.sort(key=lambda c: (c.second_pass_vertex, c.first_pass_vertex))
    return found


def crossing_count(p):
    return len(self_intersections(p))


def bin_tortuosity(t, bins=DEFAULT_BINS):
    edges = bins.tortuosity_edges
    if t < edges[0] - EPS or t >= edges[-1]:
        raise OutOfRange(f"tortuosity {t} outside [{edges[0]}, {edges[-1]})")
    t = max(t, edges[0])
    return bisect_right(edges, t) - 1


def bin_intersections(c, bins=DEFAULT_BINS):
    edges = bins.intersection_edges
    if c < edges[0] or c >= edges[-1]:
        raise OutOfRange(f"crossing count {c} outside [{edges[0]}, {edges[-1]})")
    return bisect_right(edges, c) - 1


# -- distances ---------------------------------------------------------------

def point_segment_distances(points, a, b):
    """``(k, m)`` matrix of distances from k points to m segments ab."""
    P = np.asarray(points, dtype=float)[:, None, :]
    A = np.asarray(a, dtype=float)[None, :, :]
    B = np.asarray(b, dtype=float)[None, :, :]
    ab = B - A
    denom = (ab * ab).sum(-1)
    t = np.where(denom > 0, ((P - A) * ab).sum(-1) / np.where(denom > 0, denom, 1), 0.0)
    t = np.clip(t, 0.0, 1.0)
    proj = A + t[..., None] * ab
    return np.hypot(*(P - proj).transpose(2, 0, 1))


def _point_seg(p, a, b):
    return float(point_segment_distances([p], [a], [b])[0, 0])


def _seg_seg(a, b, c, d):
    # valid only for non-intersecting segments
    return min(_point_seg(a, c, d), _point_seg(b, c, d), _point_seg(c, a, b), _point_seg(d, a, b))


def _outside_disc(a, b, center, radius):
    """Pieces of segment ab lying outside the disc (segment passes through center)."""
    a, b, center = np.asarray(a), np.asarray(b), np.asarray(center)
    L = float(np.hypot(*(b - a)))
    tc = float(np.dot(center - a, b - a)) / (L * L)
    dt = radius / L
    pieces = []
    if tc - dt > 0:
        pieces.append((a, a + (tc - dt) * (b - a)))
    if tc + dt < 1:
        pieces.append((a + (tc + dt) * (b - a), b))
    return pieces


def masked_crossing_distance(a, b, c, d, point, radius):
    """Distance between two crossing segments once a disc of ``radius``
    around their crossing point is removed; +inf when nothing remains."""
    best = math.inf
    for pa, pb in _outside_disc(a, b, point, radius):
        for pc, pd in _outside_disc(c, d, point, radius):
            best = min(best, _seg_seg(pa, pb, pc, pd))
    return best


def _pair_tables(p):
    p = np.asarray(p, dtype=float)
    n = len(p)
    m = n - 1
    D = point_segment_distances(p, p[:-1], p[1:])  # vertex v vs segment k
    # non-crossing segment distance: min over the four endpoint distances
    I, J = np.triu_indices(m, k=2)
    seg = np.minimum.reduce([D[I, J], D[I + 1, J], D[J, I], D[J + 1, I]])
    return D, I, J, seg


def separation_distances(p, masking_radius=24.0, crossings=None):
    """``(min nonlocal segment-segment distance, min vertex-to-nonincident-
    segment distance)``; ``inf`` when no eligible pair exists.

    Crossing segment pairs are compared only outside a disc of
    ``masking_radius`` around their crossing point.
    """
    p = np.asarray(p, dtype=float)
    n = len(p)
    if crossings is None:
        crossings = self_intersections(p)
    D, I, J, seg = _pair_tables(p)
    seg = seg.copy()
    where = {(i, j): k for k, (i, j) in enumerate(zip(I.tolist(), J.tolist()))}
    for c in crossings:
        seg[where[(c.i, c.j)]] = masked_crossing_distance(
            p[c.i], p[c.i + 1], p[c.j], p[c.j + 1], c.point, masking_radius)
    seg_min = float(seg.min()) if len(seg) else math.inf
    mask = np.ones_like(D, dtype=bool)
    idx = np.arange(n)
    mask[idx[1:], idx[1:] - 1] = False  # segment ending at v
    mask[idx[:-1], idx[:-1]] = False  # segment starting at v
    vs = D[mask]
    vs_min = float(vs.min()) if vs.size else math.inf
    return seg_min, vs_min


def _rule_segment_length(p, g, has_glyphs, ctx):
    min_len = max(g.min_segment_len_px, g.spacing_S) if has_glyphs else g.min_segment_len_px
    L = segment_lengths(p)
    return [Violation(RULE_SEGMENT_LENGTH, (k,), float(L[k]), min_len)
            for k in np.flatnonzero(L < min_len).tolist()]


def _rule_extent(p, g, has_glyphs, ctx):
    extent = float(np.ptp(p, axis=0).max())
    if extent < g.min_extent_px:
        return [Violation(RULE_EXTENT, (), extent, g.min_extent_px)]
    return []


def _rule_reversal(p, g, has_glyphs, ctx):
    if len(p) < 3:
        return []
    cap = 180.0 - g.reversal_angle_min_deg
    ang = turning_angles(p)
    return [Violation(RULE_REVERSAL, (v + 1,), float(ang[v]), cap)
            for v in np.flatnonzero(ang > cap).tolist()]


def _rule_vertex_spacing(p, g, has_glyphs, ctx):
    n = len(p)
    if not has_glyphs or n < 3:
        return []
    S = g.spacing_S
    a, b = np.triu_indices(n, k=2)
    d = np.hypot(*(p[a] - p[b]).T)
    bad = np.flatnonzero(d < S)
    return [Violation(RULE_VERTEX_SPACING, (int(a[k]), int(b[k])), float(d[k]), S) for k in bad.tolist()]


def _rule_vertex_segment(p, g, has_glyphs, ctx):
    if len(p) < 3:
        return []
    D = ctx["D"]
    V, K = np.indices(D.shape)
    bad = (K != V) & (K != V - 1) & (D < g.min_vertex_seg_sep_px)
    return [Violation(RULE_VERTEX_SEGMENT, (v, k), float(D[v, k]), g.min_vertex_seg_sep_px)
            for v, k in zip(V[bad].tolist(), K[bad].tolist())]


def _rule_segment_separation(p, g, has_glyphs, ctx):
    if len(p) < 4:
        return []
    try:
        crossings = ctx["crossings"]
    except DegenerateOverlap:
        return [Violation(RULE_OVERLAP, (), 0.0, 0.0)]
    sep_min = max(g.min_nonlocal_sep_px, 2 * g.glyph_radius_r) if has_glyphs else g.min_nonlocal_sep_px
    radius = g.masking_radius(has_glyphs)
    _, I, J, seg = ctx["pairs"]
    crossing_at = {(c.i, c.j): c for c in crossings}
    candidates = set(np.flatnonzero(seg < sep_min).tolist())
    if crossing_at:
        index = {(i, j): k for k, (i, j) in enumerate(zip(I.tolist(), J.tolist()))}
        candidates.update(index[key] for key in crossing_at)
    out = []
    for k in sorted(candidates):
        i, j = int(I[k]), int(J[k])
        c = crossing_at.get((i, j))
        d = float(seg[k]) if c is None else masked_crossing_distance(
            p[i], p[i + 1], p[j], p[j + 1], c.point, radius)
        if d < sep_min:
            out.append(Violation(RULE_SEGMENT_SEPARATION, (i, j), d, sep_min))
    return out


def _rule_seam(p, g, has_glyphs, ctx):
    if not g.seam_avoidance or g.seam_pitch_px <= 0:
        return []
    r = np.mod(p, g.seam_pitch_px)
    d = np.minimum(r, g.seam_pitch_px - r).min(axis=1)
    return [Violation(RULE_SEAM, (v,), float(d[v]), g.seam_pad_px)
            for v in np.flatnonzero(d < g.seam_pad_px).tolist()]


# cheapest rules first so passes_constraints can bail out early
_RULES = (
    _rule_segment_length,
    _rule_extent,
    _rule_reversal,
    _rule_seam,
    _rule_vertex_spacing,
    _rule_vertex_segment,
    _rule_segment_separation,
)


class _Context(dict):
    """Lazily computed shared tables for the rules."""

    def __init__(self, p):
        super().__init__()
        self.p = p

    def __missing__(self, key):
        if key == "pairs":
            value = _pair_tables(self.p)
        elif key == "D":
            value = self["pairs"][0]
        elif key == "crossings":
            value = self_intersections(self.p)
        else:
            raise KeyError(key)
        self[key] = value
        return value


def check_constraints(p, g=GeometryConfig(), has_glyphs=True):
    """Evaluate every view-space acceptance rule; violations are returned as data."""
    p = np.asarray(p, dtype=float)
    ctx = _Context(p)
    out = []
    for rule in _RULES:
        out.extend(rule(p, g, has_glyphs, ctx))
    return AcceptanceReport(out)


def passes_constraints(p, g=GeometryConfig(), has_glyphs=True):
    """Boolean form of :func:`check_constraints` that stops at the first violation."""
    p = np.asarray(p, dtype=float)
    ctx = _Context(p)
    return not any(rule(p, g, has_glyphs, ctx) for rule in _RULES)


def fit_to_view(p, g=GeometryConfig()):
    """Uniformly scale and translate ``p`` so its bounding box fills
    ``[margin, view - margin]`` along its longer axis and is centered."""
    p = np.asarray(p, dtype=float)
    lo, hi = p.min(axis=0), p.max(axis=0)
    span = float((hi - lo).max())
    if span <= 0:
        raise DegenerateBBox("all points coincide")
    avail = g.view_px - 2 * g.margin_px
    scale = avail / span
    center = (lo + hi) / 2
    return (p - center) * scale + g.view_px / 2.0
