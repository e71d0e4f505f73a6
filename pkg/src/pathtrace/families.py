"""Parametric backbone families.

Each family turns a target cell and a seeded RNG into a raw candidate
polyline. Candidates are not fitted or validated here; the acceptance gate
in :mod:`pathtrace.generator` decides.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import geometry as geo
from .errors import ConstructionFailed

FAMILY_NAMES = ("bowtie", "rail_weave", "split_star", "braid", "knot_template", "proposal_walk", "bootstrap")


@dataclass(frozen=True)
class CellTarget:
    tbin: int
    sbin: int
    n_points: int
    quota: int = 1

    def __post_init__(self):
        if self.n_points < 2:
            raise ValueError("n_points must be >= 2")
        if self.quota < 1:
            raise ValueError("quota must be >= 1")

    @property
    def key(self):
        return (self.tbin, self.sbin, self.n_points)


@dataclass(frozen=True)
class Family:
    name: str
    points_preserving: bool
    reachable: Callable
    build: Callable


def max_crossings(n_points):
    """Upper bound on crossings of an open polyline: its non-adjacent segment pairs."""
    m = n_points - 1
    return max(0, (m - 1) * (m - 2) // 2)


def _generic_reachable(cell, bins):
    lo, _ = bins.intersection_range(cell.sbin)
    return lo <= max_crossings(cell.n_points)


def _target_crossings(cell, bins, rng, cap=None):
    lo, hi = bins.intersection_range(cell.sbin)
    if cap is not None:
        hi = min(hi, cap)
    if hi < lo:
        raise ConstructionFailed("crossing target unreachable")
    return int(rng.integers(lo, hi + 1))


def _rotate(p, theta):
    c, s = math.cos(theta), math.sin(theta)
    return p @ np.array([[c, -s], [s, c]]).T


def resample(p, n):
    """``n`` points spaced uniformly in arc length along ``p`` (endpoints kept)."""
    p = np.asarray(p, dtype=float)
    cum = np.concatenate([[0.0], np.cumsum(geo.segment_lengths(p))])
    s = np.linspace(0.0, cum[-1], n)
    return np.column_stack([np.interp(s, cum, p[:, 0]), np.interp(s, cum, p[:, 1])])


def _tail(start, heading, count, rng, step=1.0, spread=0.6):
    pts, h, cur = [], heading, np.asarray(start, dtype=float)
    for _ in range(count):
        h += rng.normal(0, spread)
        cur = cur + step * rng.uniform(0.9, 1.4) * np.array([math.cos(h), math.sin(h)])
        pts.append(cur)
    return pts


# -- bowtie: chain of figure-eight lobes, one crossing per lobe ---------------

def _bowtie_reachable(cell, bins):
    lo, _ = bins.intersection_range(cell.sbin)
    return cell.sbin >= 1 and 3 * lo + 1 <= cell.n_points and cell.tbin <= 3


def _bowtie(cell, rng, g, bins):
    n = cell.n_points
    k = _target_crossings(cell, bins, rng, cap=(n - 1) // 3)
    pts = [np.array([0.0, 0.0])]
    x = 0.0
    for _ in range(k):
        a = rng.uniform(1.8, 2.6)
        h = rng.uniform(1.4, 2.8)
        back = rng.uniform(0.7, 1.1)
        fwd = rng.uniform(0.0, 0.4)
        pts.append(np.array([x + a + fwd, h]))
        pts.append(np.array([x + a - back, h]))
        x += a
        pts.append(np.array([x, 0.0]))
    extra = n - len(pts)
    before = int(rng.integers(0, extra + 1))
    lead = _tail(pts[0], math.pi + rng.uniform(-0.5, 0.5), before, rng, step=rng.uniform(1.0, 2.5), spread=0.35)
    trail = _tail(pts[-1], rng.uniform(-0.5, 0.5), extra - before, rng, step=rng.uniform(1.0, 2.5), spread=0.35)
    out = np.array(lead[::-1] + pts + trail)
    out += rng.normal(0, 0.05, out.shape)
    return _rotate(out, rng.uniform(0, 2 * math.pi))


# -- rail_weave: a rail traversed once, then a weave crossing it back ---------

def _rail_weave_reachable(cell, bins):
    lo, _ = bins.intersection_range(cell.sbin)
    return cell.sbin >= 1 and cell.n_points >= lo + 3


def _rail_weave(cell, rng, g, bins):
    n = cell.n_points
    s = _target_crossings(cell, bins, rng, cap=n - 3)
    w = s + 1
    rail_n = n - w
    W = 10.0
    h = rng.uniform(0.7, 1.6)
    t_lo, t_hi = bins.tortuosity_range(cell.tbin)
    target_t = rng.uniform(t_lo, t_hi)
    x_start = W - rng.uniform(0.3, 0.8)
    sign = 1 if rng.random() < 0.5 else -1

    def weave(x_end):
        xs = np.linspace(x_start, x_end, w)
        ys = np.array([sign * h * (1 if k % 2 == 0 else -1) for k in range(w)])
        return np.column_stack([xs, ys])

    def rail(weave_pts):
        mids = (weave_pts[:-1, 0] + weave_pts[1:, 0]) / 2
        cand = np.linspace(0.5, W - 0.5, 400)
        clear = np.abs(mids[:, None] - cand[None, :]).min(axis=0) if len(mids) else np.full(len(cand), 9.0)
        targets = np.linspace(0, W, rail_n)[1:-1] + rng.uniform(-0.2, 0.2, max(0, rail_n - 2))
        xs = [0.0]
        for t in targets:
            ok = cand[(clear > 0.35) & (cand > xs[-1] + 0.55)]
            if not len(ok):
                raise ConstructionFailed("rail vertices collide with weave crossings")
            xs.append(float(ok[np.argmin(np.abs(ok - t))]))
        if W - xs[-1] < 0.55:
            raise ConstructionFailed("rail overruns its end")
        xs.append(W)
        return np.column_stack([xs, rng.normal(0, 0.06, len(xs))])

    hi_end = x_start - 0.55 * (w - 1)
    if hi_end < 0.2:
        raise ConstructionFailed("weave too wide for the rail")
    best = None
    for x_end in np.linspace(0.2, hi_end, 25):
        wv = weave(x_end)
        try:
            rl = rail(wv)
        except ConstructionFailed:
            continue
        cand = np.vstack([rl, wv])
        err = abs(geo.arc_length(cand) / max(geo.chord_length(cand), 1e-9) - target_t)
        if best is None or err < best[0]:
            best = (err, cand)
    if best is None:
        raise ConstructionFailed("no rail/weave layout")
    out = best[1] + rng.normal(0, 0.03, best[1].shape)
    return _rotate(out, rng.uniform(0, 2 * math.pi))


# -- split_star: open traversal of a star polygon {m/k} ----------------------

def _split_star_reachable(cell, bins):
    return cell.sbin >= 1 and cell.n_points >= 5 and _generic_reachable(cell, bins)


def _split_star(cell, rng, g, bins):
    n = cell.n_points
    m = n + int(rng.integers(0, 4))
    steps = [k for k in range(2, (m - 1) // 2 + 1) if math.gcd(m, k) == 1]
    if not steps:
        raise ConstructionFailed("no coprime star step")
    lo, _ = bins.intersection_range(cell.sbin)
    # larger steps give more crossings
    if lo >= 4:
        k = steps[-1 - int(rng.integers(0, min(2, len(steps))))]
    else:
        k = steps[int(rng.integers(0, len(steps)))]
    theta0 = rng.uniform(0, 2 * math.pi)
    idx = np.arange(n)
    ang = theta0 + 2 * math.pi * k * idx / m + rng.normal(0, 0.04, n)
    rad = rng.uniform(0.75, 1.1, n)
    pts = np.column_stack([rad * np.cos(ang), rad * np.sin(ang)])
    return pts * np.array([1.0, rng.uniform(0.7, 1.0)])


# -- braid: two phase-shifted sinusoid strands joined end to end --------------

def _braid_reachable(cell, bins):
    return cell.sbin >= 1 and cell.n_points >= 6 and _generic_reachable(cell, bins)


def _braid(cell, rng, g, bins):
    L = 10.0
    amp = rng.uniform(0.8, 2.0)
    cycles = rng.uniform(0.6, 0.35 * cell.n_points / 2 + 0.6)
    phi = rng.uniform(0.6, math.pi - 0.6)
    x_end = rng.uniform(0.0, 0.6) * L
    x1 = np.linspace(0, L, 200)
    y1 = amp * np.sin(2 * math.pi * cycles * x1 / L)
    x2 = np.linspace(L, x_end, 200)[1:]
    y2 = amp * np.sin(2 * math.pi * cycles * x2 / L + phi) + rng.uniform(-0.2, 0.2)
    turn = np.array([[L + amp * 0.8, (y1[-1] + y2[0]) / 2]])
    dense = np.vstack([np.column_stack([x1, y1]), turn, np.column_stack([x2, y2])])
    return _rotate(dense, rng.uniform(0, 2 * math.pi))


# -- knot_template: sampled projections of classic knot diagrams -------------

def _trefoil(t):
    return np.column_stack([np.sin(t) + 2 * np.sin(2 * t), np.cos(t) - 2 * np.cos(2 * t)])


def _figure_eight(t):
    r = 2 + np.cos(2 * t)
    return np.column_stack([r * np.cos(3 * t), r * np.sin(3 * t)])


def _torus(p, q):
    def curve(t):
        r = np.cos(q * t) + 2
        return np.column_stack([r * np.cos(p * t), r * np.sin(p * t)])
    return curve


def _lissajous(a, b, delta):
    def curve(t):
        return np.column_stack([np.sin(a * t + delta), np.sin(b * t)])
    return curve


KNOT_TEMPLATES = {
    "trefoil": _trefoil,
    "figure_eight": _figure_eight,
    "torus_2_5": _torus(2, 5),
    "torus_3_4": _torus(3, 4),
    "torus_2_7": _torus(2, 7),
    "lissajous_3_2": _lissajous(3, 2, math.pi / 2),
    "lissajous_4_3": _lissajous(4, 3, math.pi / 4),
    "lissajous_5_4": _lissajous(5, 4, math.pi / 3),
}


def _knot_reachable(cell, bins):
    return cell.sbin >= 2 and cell.n_points >= 7 and _generic_reachable(cell, bins)


def _knot_template(cell, rng, g, bins):
    names = sorted(KNOT_TEMPLATES)
    curve = KNOT_TEMPLATES[names[int(rng.integers(0, len(names)))]]
    t0 = rng.uniform(0, 2 * math.pi)
    span = rng.uniform(0.55, 0.95) * 2 * math.pi
    t = np.linspace(t0, t0 + span, cell.n_points) + rng.normal(0, 0.02, cell.n_points)
    pts = curve(np.sort(t))
    pts = pts * np.array([1.0, rng.uniform(0.75, 1.0)])
    return _rotate(pts, rng.uniform(0, 2 * math.pi))


# -- proposal_walk: constraint-gated incremental walk -------------------------

_TURN_SD = (10.0, 30.0, 50.0, 70.0, 85.0, 95.0)


def _cross_mask(a, b, A, B):
    """Which segments AB properly cross segment ab (vectorized)."""
    def orient(p, q, r):
        return (q[..., 0] - p[..., 0]) * (r[..., 1] - p[..., 1]) - (q[..., 1] - p[..., 1]) * (r[..., 0] - p[..., 0])
    a2, b2 = np.broadcast_to(a, A.shape), np.broadcast_to(b, A.shape)
    o1, o2 = orient(a2, b2, A), orient(a2, b2, B)
    o3, o4 = orient(A, B, a2), orient(A, B, b2)
    eps = geo.EPS
    return (o1 * o2 < -eps * eps) & (o3 * o4 < -eps * eps) & (np.abs(o1) > eps) & (np.abs(o2) > eps) \
        & (np.abs(o3) > eps) & (np.abs(o4) > eps)


def _extension(path, q, g, box):
    """Check appending vertex q to path; returns the number of new crossings or None."""
    S = g.spacing_S
    sep = max(g.min_nonlocal_sep_px, 2 * g.glyph_radius_r)
    vseg = g.min_vertex_seg_sep_px
    lo, hi = box
    if not (lo <= q[0] <= hi and lo <= q[1] <= hi):
        return None
    v = path[-1]
    e = q - v
    if math.hypot(*e) < S:
        return None
    if len(path) >= 2:
        d0 = v - path[-2]
        ang = math.degrees(abs(math.atan2(d0[0] * e[1] - d0[1] * e[0], d0 @ e)))
        if ang > 180.0 - g.reversal_angle_min_deg - 2.0:
            return None
    earlier = path[:-1]
    if len(earlier) and np.min(np.hypot(*(earlier - q).T)) < S:
        return None
    if len(path) >= 2:
        if geo.point_segment_distances([q], path[:-1], path[1:]).min() < vseg:
            return None
        if geo.point_segment_distances(path[:-1], [v], [q]).min() < vseg:
            return None
    # existing segments not adjacent to the new one
    A, B = path[:-2], path[1:-1]
    if len(path) < 3 or not len(A):
        return 0
    crosses = _cross_mask(v, q, A, B)
    radius = g.masking_radius(True)
    for idx in range(len(A)):
        if crosses[idx]:
            pt = geo.segment_crossing(tuple(A[idx]), tuple(B[idx]), tuple(v), tuple(q))
            if pt is None:
                return None
            d = geo.masked_crossing_distance(A[idx], B[idx], v, q, pt, radius)
        else:
            d = min(
                geo.point_segment_distances([A[idx], B[idx]], [v], [q]).min(),
                geo.point_segment_distances([v, q], [A[idx]], [B[idx]]).min(),
            )
        if d < sep:
            return None
    return int(crosses.sum())


def _walk_reachable(cell, bins):
    return _generic_reachable(cell, bins)


def _final_step_lengths(path, u, target_t):
    """Step lengths d along unit vector u from path[-1] giving tortuosity target_t."""
    A = geo.arc_length(path) if len(path) > 1 else 0.0
    w = path[-1] - path[0]
    T2 = target_t * target_t
    a = 1.0 - T2
    b = 2.0 * (A - T2 * float(w @ u))
    c = A * A - T2 * float(w @ w)
    if abs(a) < 1e-12:
        return [-c / b] if abs(b) > 1e-12 else []
    disc = b * b - 4 * a * c
    if disc < 0:
        return []
    r = math.sqrt(disc)
    return [(-b - r) / (2 * a), (-b + r) / (2 * a)]


def _proposal_walk(cell, rng, g, bins, tries=24):
    S = g.spacing_S
    box = (g.margin_px, g.view_px - g.margin_px)
    n = cell.n_points
    c_lo, c_hi = bins.intersection_range(cell.sbin)
    target_c = _target_crossings(cell, bins, rng)
    t_lo, t_hi = bins.tortuosity_range(cell.tbin)
    target_t = rng.uniform(t_lo, t_hi)
    sd = math.radians(_TURN_SD[min(cell.tbin, len(_TURN_SD) - 1)] * rng.uniform(0.7, 1.3))
    span = box[1] - box[0]
    step_hi = max(S * 1.3, min(span * 0.6, 1.6 * span / max(1, n - 1) * (1.0 + 0.5 * cell.tbin)))

    path = np.array([rng.uniform(box[0], box[1], 2)])
    heading = rng.uniform(0, 2 * math.pi)
    crossings = 0
    for k in range(1, n - 1):
        remaining = n - 1 - k
        need = target_c - crossings
        best, best_score = None, None
        for _ in range(tries):
            aim = need > 0 and len(path) >= 3 and rng.random() < 0.6
            if aim:
                seg = int(rng.integers(0, len(path) - 2))
                tpt = path[seg] + rng.uniform(0.25, 0.75) * (path[seg + 1] - path[seg])
                dvec = tpt - path[-1]
                dist = math.hypot(*dvec)
                if dist < 1e-6:
                    continue
                h = math.atan2(dvec[1], dvec[0])
                L = dist + rng.uniform(1.5, 4.0) * S
            else:
                h = heading + rng.normal(0, sd)
                L = rng.uniform(S * 1.1, step_hi)
            q = path[-1] + L * np.array([math.cos(h), math.sin(h)])
            added = _extension(path, q, g, box)
            if added is None or crossings + added > c_hi:
                continue
            new_need = need - added
            # prefer progress towards the crossing target, keep a feasible budget
            score = -abs(new_need) if new_need > 0 else (0 if new_need == 0 else -10)
            if new_need > remaining * max(1, k):
                score -= 5
            score += rng.uniform(0, 0.5)
            if best_score is None or score > best_score:
                best, best_score, best_added, best_h = q, score, added, h
        if best is None:
            raise ConstructionFailed(f"walk stuck at vertex {k}")
        path = np.vstack([path, best])
        crossings += best_added
        heading = best_h
    # final vertex: steer the endpoint onto the tortuosity target
    for _ in range(tries * 2):
        h = heading + rng.normal(0, max(sd, 0.6))
        u = np.array([math.cos(h), math.sin(h)])
        for d in _final_step_lengths(path, u, target_t):
            if d < S:
                continue
            q = path[-1] + d * u
            added = _extension(path, q, g, box)
            if added is None or not (c_lo <= crossings + added <= c_hi):
                continue
            return np.vstack([path, q])
    raise ConstructionFailed("no endpoint meets the tortuosity target")


def _bootstrap_reachable(cell, bins):
    return True


def _bootstrap_build(cell, rng, g, bins):
    raise ConstructionFailed("bootstrap candidates come from bootstrap_grow with a source record")


FAMILIES = {
    "bowtie": Family("bowtie", True, _bowtie_reachable, _bowtie),
    "rail_weave": Family("rail_weave", True, _rail_weave_reachable, _rail_weave),
    "split_star": Family("split_star", True, _split_star_reachable, _split_star),
    "braid": Family("braid", False, _braid_reachable, _braid),
    "knot_template": Family("knot_template", False, _knot_reachable, _knot_template),
    "proposal_walk": Family("proposal_walk", True, _walk_reachable, _proposal_walk),
    "bootstrap": Family("bootstrap", True, _bootstrap_reachable, _bootstrap_build),
}
