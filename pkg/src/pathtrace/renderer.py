"""Scene construction: glyph assignment, confounding segments and SVG output."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from . import geometry as geo
from .errors import PlacementInfeasible, TooManyPoints

COLORS = ("red", "blue", "green", "orange", "yellow", "cyan", "purple", "brown")
SHAPES = ("circle", "square", "tri", "star", "plus")
VOCAB = tuple(product(COLORS, SHAPES))
START_GLYPH = ("red", "square")


def glyph_token(glyph):
    return f"{glyph[0]} {glyph[1]}"


VOCAB_TOKENS = frozenset(glyph_token(g) for g in VOCAB)


def assign_glyphs(n_points, seed):
    """Distinct glyph per vertex, the start vertex always red square."""
    if n_points > len(VOCAB):
        raise TooManyPoints(f"{n_points} vertices exceed the {len(VOCAB)}-glyph vocabulary")
    if n_points < 1:
        raise ValueError("n_points must be positive")
    rest = [g for g in VOCAB if g != START_GLYPH]
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    picks = rng.choice(len(rest), size=n_points - 1, replace=False)
    return [START_GLYPH] + [rest[int(i)] for i in picks]


@dataclass(frozen=True)
class ConfoundConfig:
    lengths_S: tuple = (3.0, 8.0)  # length range in units of S
    band_r: tuple = (1.5, 6.0)  # min-distance band to the path in units of r
    encounter_r: float = 3.0
    vertex_clearance_r: float = 2.0
    allow_crossing: bool = False
    retries: int = 400

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for k in ("lengths_S", "band_r"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass
class ConfoundSet:
    segments: list = field(default_factory=list)
    encounters: list = field(default_factory=list)  # per segment; None if never approached
    requested: int = 0

    @property
    def k(self):
        return len(self.segments)

    @property
    def encounter_token_indices(self):
        return sorted(e for e in self.encounters if e is not None)

    def to_json(self):
        return {
            "segments": [[[float(a[0]), float(a[1])], [float(b[0]), float(b[1])]] for a, b in self.segments],
            "encounters": list(self.encounters),
            "requested": self.requested,
        }

    @classmethod
    def from_json(cls, d):
        segs = [(np.asarray(a, float), np.asarray(b, float)) for a, b in d["segments"]]
        return cls(segs, list(d["encounters"]), int(d.get("requested", len(segs))))


def _path_distances(p, a, b):
    """Distance from segment (a, b) to every path segment (0 where they cross)."""
    A, B = p[:-1], p[1:]
    a2, b2 = np.asarray(a, float)[None], np.asarray(b, float)[None]
    d_vert = geo.point_segment_distances(p, a2, b2)[:, 0]
    d_seg = np.minimum(d_vert[:-1], d_vert[1:])
    d_end = geo.point_segment_distances(np.vstack([a2, b2]), A, B).min(axis=0)
    dist = np.minimum(d_seg, d_end)

    def orient(u, v, w):
        return (v[..., 0] - u[..., 0]) * (w[..., 1] - u[..., 1]) - (v[..., 1] - u[..., 1]) * (w[..., 0] - u[..., 0])

    o1, o2 = orient(A, B, a2), orient(A, B, b2)
    o3, o4 = orient(a2, b2, A), orient(a2, b2, B)
    crossing = (o1 * o2 < 0) & (o3 * o4 < 0)
    return np.where(crossing, 0.0, dist)


def _seg_seg_distance(a, b, c, d):
    return float(_path_distances(np.array([c, d], dtype=float), a, b)[0])


def encounter_index(p, a, b, d_enc):
    """Smallest vertex index v whose path prefix comes within ``d_enc`` of
    segment (a, b); None if the path never does."""
    p = np.asarray(p, dtype=float)
    if geo.point_segment_distances(p[:1], [a], [b])[0, 0] <= d_enc:
        return 0
    dist = _path_distances(p, a, b)
    hits = np.flatnonzero(dist <= d_enc)
    return int(hits[0]) + 1 if len(hits) else None


def place_confounds(record, k, g=geo.GeometryConfig(), seed=0, cfg=ConfoundConfig()):
    """Place up to ``k`` straight distractor segments near the path.

    Each confound lies inside the view, keeps ``vertex_clearance_r * r`` from
    every vertex, has minimum distance to the path inside the band, and does
    not touch other confounds. Proposals are retried up to ``cfg.retries``
    times per confound; fewer than ``k`` may be returned.
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    if k == 0:
        return ConfoundSet([], [], 0)
    p = np.asarray(record.vertices if hasattr(record, "vertices") else record, dtype=float)
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    r, S = g.glyph_radius_r, g.spacing_S
    lo_band = 0.0 if cfg.allow_crossing else cfg.band_r[0] * r
    hi_band = cfg.band_r[1] * r
    clearance = cfg.vertex_clearance_r * r
    d_enc = cfg.encounter_r * r
    seg_len = geo.segment_lengths(p)
    weights = seg_len / seg_len.sum()
    segs, encs = [], []
    for _ in range(k):
        placed = None
        for attempt in range(cfg.retries):
            s = int(rng.choice(len(seg_len), p=weights))
            d = p[s + 1] - p[s]
            tangent = d / seg_len[s]
            normal = np.array([-tangent[1], tangent[0]]) * rng.choice([-1.0, 1.0])
            anchor = p[s] + rng.uniform(0.2, 0.8) * d + normal * rng.uniform(max(lo_band, clearance * 0.5), hi_band)
            theta = rng.normal(0.0, 0.35)
            direction = tangent * math.cos(theta) + normal * math.sin(theta)
            length = rng.uniform(*cfg.lengths_S) * S
            shift = rng.uniform(-0.5, 0.5) * length
            a = anchor + direction * (shift - length / 2)
            b = anchor + direction * (shift + length / 2)
            if min(a.min(), b.min()) < r or max(a.max(), b.max()) > g.view_px - r:
                continue
            if geo.point_segment_distances(p, [a], [b]).min() < clearance:
                continue
            dist = _path_distances(p, a, b).min()
            if dist > hi_band or dist < lo_band or (not cfg.allow_crossing and dist <= 0):
                continue
            if any(_seg_seg_distance(a, b, c0, c1) < 2 * r for c0, c1 in segs):
                continue
            enc = encounter_index(p, a, b, d_enc)
            # prefer distinct encounter points while retries remain
            if enc is not None and enc in encs and attempt < cfg.retries // 2:
                continue
            placed = (a, b, enc)
            break
        if placed is None:
            break
        segs.append((placed[0], placed[1]))
        encs.append(placed[2])
    if not segs:
        raise PlacementInfeasible(f"no confound fits around record {getattr(record, 'id', '?')}")
    order = sorted(range(len(segs)), key=lambda i: (math.inf if encs[i] is None else encs[i], i))
    return ConfoundSet([segs[i] for i in order], [encs[i] for i in order], k)


# -- SVG ----------------------------------------------------------------------

@dataclass(frozen=True)
class SceneSpec:
    view_px: int = 672
    stroke_width_px: float = 3.0
    stroke_color: str = "#000000"
    glyph_radius_r: float = 9.0
    glyph_padding_p: float = 4.0
    glyph_outline_px: float = 1.0
    background: str = "#ffffff"
    fills: tuple = tuple((c, c) for c in COLORS)
    seam_avoidance: bool = False

    @classmethod
    def from_geometry(cls, g, **kw):
        return cls(view_px=g.view_px, glyph_radius_r=g.glyph_radius_r, glyph_padding_p=g.glyph_padding_p,
                   seam_avoidance=g.seam_avoidance, **kw)

    def fill(self, color):
        return dict(self.fills)[color]


def _f(x):
    s = f"{x:.3f}"
    return "0.000" if s == "-0.000" else s


def _pts(points):
    return " ".join(f"{_f(x)},{_f(y)}" for x, y in points)


def glyph_outline(shape, cx, cy, r):
    """Polygon vertices for non-circle shapes (circle returns None)."""
    if shape == "circle":
        return None
    if shape == "square":
        h = 0.9 * r
        return [(cx - h, cy - h), (cx + h, cy - h), (cx + h, cy + h), (cx - h, cy + h)]
    if shape == "tri":
        return [(cx + r * math.cos(a), cy - r * math.sin(a))
                for a in (math.pi / 2, math.pi / 2 + 2 * math.pi / 3, math.pi / 2 + 4 * math.pi / 3)]
    if shape == "star":
        out = []
        for k in range(10):
            rad = r if k % 2 == 0 else 0.4 * r
            a = math.pi / 2 + k * math.pi / 5
            out.append((cx + rad * math.cos(a), cy - rad * math.sin(a)))
        return out
    if shape == "plus":
        w = 0.3 * r
        return [(cx - w, cy - r), (cx + w, cy - r), (cx + w, cy - w), (cx + r, cy - w), (cx + r, cy + w),
                (cx + w, cy + w), (cx + w, cy + r), (cx - w, cy + r), (cx - w, cy + w), (cx - r, cy + w),
                (cx - r, cy - w), (cx - w, cy - w)]
    raise ValueError(f"unknown shape {shape!r}")


def render_svg(record, glyphs, confounds=None, spec=SceneSpec()):
    """Standalone SVG text; a pure function of its inputs."""
    p = np.asarray(record.vertices if hasattr(record, "vertices") else record, dtype=float)
    if len(glyphs) != len(p):
        raise ValueError(f"{len(glyphs)} glyphs for {len(p)} vertices")
    confounds = confounds or ConfoundSet()
    v = spec.view_px
    stroke = (f'fill="none" stroke="{spec.stroke_color}" stroke-width="{_f(spec.stroke_width_px)}" '
              f'stroke-linecap="round" stroke-linejoin="round"')
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{v}" height="{v}" viewBox="0 0 {v} {v}">',
        f'<rect x="0" y="0" width="{v}" height="{v}" fill="{spec.background}"/>',
    ]
    lines.append(f'<polyline class="path" points="{_pts(p)}" {stroke}/>')
    for a, b in confounds.segments:
        lines.append(f'<polyline class="confound" points="{_pts([a, b])}" {stroke}/>')
    r = spec.glyph_radius_r
    for idx, ((color, shape), (x, y)) in enumerate(zip(glyphs, p)):
        paint = f'fill="{spec.fill(color)}" stroke="#000000" stroke-width="{_f(spec.glyph_outline_px)}"'
        outline = glyph_outline(shape, x, y, r)
        if outline is None:
            body = f'<circle cx="{_f(x)}" cy="{_f(y)}" r="{_f(r)}" {paint}/>'
        else:
            body = f'<polygon points="{_pts(outline)}" {paint}/>'
        lines.append(f'<g class="glyph" data-index="{idx}" data-glyph="{color} {shape}">{body}</g>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"
