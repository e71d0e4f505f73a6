"""Backbone generation: proposals, mutations, the acceptance gate, bootstrap
growth and near-duplicate filtering, driven per cell by a deterministic
seed schedule."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from . import geometry as geo
from . import jsonio
from .errors import (
    ConstructionFailed,
    DegenerateBBox,
    FamilyInapplicable,
    GeometryError,
    GrowthInfeasible,
    MutationInfeasible,
)
from .families import FAMILIES, CellTarget, resample

log = logging.getLogger(__name__)

MUTATION_KINDS = ("anisotropic_scale", "local_warp", "extend_endpoint", "safe_split", "permute_crossings")
SIGNATURE_SAMPLES = 64


def attempt_seed(master_seed, tbin, sbin, n_points, attempt):
    """64-bit seed for one attempt; depends only on the cell and attempt index."""
    ss = np.random.SeedSequence([int(master_seed), int(tbin), int(sbin), int(n_points), int(attempt)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _rng(seed):
    return np.random.default_rng(np.random.SeedSequence(int(seed)))


@dataclass
class BackboneRecord:
    id: int
    family: str
    vertices: np.ndarray
    tortuosity: float
    crossings: int
    tbin: int
    sbin: int
    n_points: int
    seed: int
    provenance: int | None = None
    regime: str | None = None
    lane_count: int | None = None

    def to_json(self):
        d = {
            "id": self.id,
            "family": self.family,
            "vertices": [[float(x), float(y)] for x, y in np.asarray(self.vertices)],
            "tortuosity": float(self.tortuosity),
            "crossings": int(self.crossings),
            "tbin": self.tbin,
            "sbin": self.sbin,
            "n_points": int(self.n_points),
            "seed": int(self.seed),
            "provenance": self.provenance,
        }
        if self.regime is not None:
            d["regime"] = self.regime
            d["lane_count"] = self.lane_count
        return d

    @classmethod
    def from_json(cls, d):
        return cls(
            id=int(d["id"]),
            family=d["family"],
            vertices=np.asarray(d["vertices"], dtype=float),
            tortuosity=float(d["tortuosity"]),
            crossings=int(d["crossings"]),
            tbin=d["tbin"],
            sbin=d["sbin"],
            n_points=int(d["n_points"]),
            seed=int(d["seed"]),
            provenance=d.get("provenance"),
            regime=d.get("regime"),
            lane_count=d.get("lane_count"),
        )


# -- proposals and mutations ---------------------------------------------------

def propose(family, cell, seed, g=geo.GeometryConfig(), bins=geo.DEFAULT_BINS):
    """Raw candidate with ``cell.n_points`` vertices from one family."""
    fam = FAMILIES[family]
    if not fam.reachable(cell, bins) or family == "bootstrap":
        raise FamilyInapplicable(f"{family} cannot reach cell {cell.key}")
    rng = _rng(seed)
    raw = np.asarray(fam.build(cell, rng, g, bins), dtype=float)
    if not fam.points_preserving:
        raw = resample(raw, cell.n_points)
    if len(raw) != cell.n_points:
        raise ConstructionFailed(f"{family} built {len(raw)} vertices, wanted {cell.n_points}")
    try:
        return geo.as_polyline(raw)
    except GeometryError as exc:
        raise ConstructionFailed(str(exc)) from exc


def _min_split_len(g):
    return max(g.min_segment_len_px, g.spacing_S)


def safe_split(p, g, rng, bend=0.0):
    """Insert one vertex strictly inside a segment long enough that both
    halves keep the minimum segment length. ``bend`` offsets the new vertex
    perpendicular to the segment by that fraction of the shorter half."""
    p = np.asarray(p, dtype=float)
    min_len = _min_split_len(g)
    L = geo.segment_lengths(p)
    eligible = np.flatnonzero(L >= 2 * min_len)
    if not len(eligible):
        raise MutationInfeasible("no segment long enough to split")
    k = int(rng.choice(eligible))
    a, b = p[k], p[k + 1]
    lo, hi = min_len / L[k], 1 - min_len / L[k]
    # keep away from crossing points lying on this segment
    hits = []
    try:
        for c in geo.self_intersections(p):
            if k in (c.i, c.j):
                hits.append(float(np.dot(np.asarray(c.point) - a, b - a) / L[k] ** 2))
    except GeometryError:
        pass
    ts = rng.uniform(lo, hi, 8) if hi > lo else np.array([0.5])
    if hits:
        ts = ts[np.argsort([-min(abs(t - h) for h in hits) for t in ts])]
    t = float(ts[0])
    q = a + t * (b - a)
    if bend:
        normal = np.array([-(b - a)[1], (b - a)[0]]) / L[k]
        q = q + normal * bend * min(t, 1 - t) * L[k] * rng.uniform(-1, 1)
    return np.vstack([p[: k + 1], q, p[k + 1:]])


def mutate(p, kind, seed, g=geo.GeometryConfig(), factors=None):
    """Deterministic structural mutation of a polyline (result is not re-fitted)."""
    p = np.asarray(p, dtype=float)
    rng = _rng(seed)
    n = len(p)
    if kind == "anisotropic_scale":
        if factors is None:
            f = rng.uniform(0.5, 2.0)
            factors = (f, 1.0) if rng.random() < 0.5 else (1.0, f)
        factors = np.asarray(factors, dtype=float)
        if np.allclose(factors, factors[0]):
            raise MutationInfeasible("isotropic factors leave the shape unchanged")
        c = p.mean(axis=0)
        out = (p - c) * factors + c
    elif kind == "local_warp":
        v = int(rng.integers(0, n))
        scale = 0.2 * float(np.mean(geo.segment_lengths(p)))
        shift = rng.normal(0, scale, 2)
        w = np.exp(-0.5 * ((np.arange(n) - v) / 0.8) ** 2)
        out = p + w[:, None] * shift
    elif kind == "extend_endpoint":
        if rng.random() < 0.5:
            out = p.copy()
            out[-1] = p[-2] + rng.uniform(1.2, 2.0) * (p[-1] - p[-2])
        else:
            out = p.copy()
            out[0] = p[1] + rng.uniform(1.2, 2.0) * (p[0] - p[1])
    elif kind == "safe_split":
        out = safe_split(p, g, rng)
    elif kind == "permute_crossings":
        if n < 4:
            raise MutationInfeasible("need at least two interior vertices to permute")
        i = int(rng.integers(1, n - 2))
        j = int(rng.integers(i + 1, n - 1))
        out = p.copy()
        out[i: j + 1] = p[i: j + 1][::-1]
    else:
        raise ValueError(f"unknown mutation kind {kind!r}")
    if np.array_equal(out, p):
        raise MutationInfeasible(f"{kind} produced an identical polyline")
    try:
        return geo.as_polyline(out)
    except GeometryError as exc:
        raise MutationInfeasible(str(exc)) from exc


# -- acceptance ------------------------------------------------------------------

def measure(vertices, g=geo.GeometryConfig(), bins=geo.DEFAULT_BINS):
    """(tortuosity, crossings, tbin, sbin); raises GeometryError subclasses."""
    t = geo.tortuosity(vertices, g.epsilon_chord)
    c = len(geo.self_intersections(vertices))
    return t, c, geo.bin_tortuosity(t, bins), geo.bin_intersections(c, bins)


def evaluate(candidate, cell, g=geo.GeometryConfig(), bins=geo.DEFAULT_BINS):
    """Fit ``candidate`` and run the gate; returns ``(fitted, metrics, reason)``
    where ``reason`` is None on acceptance."""
    try:
        fitted = geo.fit_to_view(candidate, g)
    except DegenerateBBox:
        return None, None, "degenerate_bbox"
    if len(fitted) != cell.n_points:
        return fitted, None, "point_count"
    # cheap length/angle rules before the crossing enumeration
    if not geo.passes_constraints(fitted, g, has_glyphs=True):
        return fitted, None, "constraints"
    try:
        metrics = measure(fitted, g, bins)
    except GeometryError as exc:
        return fitted, None, type(exc).__name__
    if metrics[2] != cell.tbin:
        return fitted, metrics, "tortuosity_bin"
    if metrics[3] != cell.sbin:
        return fitted, metrics, "intersection_bin"
    return fitted, metrics, None


def accept(candidate, cell, g=geo.GeometryConfig(), bins=geo.DEFAULT_BINS, *, family="unknown",
           seed=0, record_id=-1, provenance=None):
    """BackboneRecord holding the fitted vertices, or None if rejected."""
    fitted, metrics, reason = evaluate(candidate, cell, g, bins)
    if reason is not None:
        log.debug("rejected candidate for cell %s: %s", cell.key, reason)
        return None
    t, c, tb, sb = metrics
    return BackboneRecord(record_id, family, fitted, t, c, tb, sb, cell.n_points, seed, provenance)


def bootstrap_grow(source, target_n, g=geo.GeometryConfig(), seed=0, max_attempts=200):
    """Grow an accepted backbone to ``target_n`` vertices by safe splits that
    keep its crossing count."""
    src = np.asarray(source.vertices, dtype=float)
    if target_n <= len(src):
        raise ValueError(f"target_n ({target_n}) must exceed the source point count ({len(src)})")
    rng = _rng(seed)
    lo = src.min(axis=0)
    unit = (src - lo) / float(np.ptp(src, axis=0).max())
    p = geo.fit_to_view(unit, g)
    base = len(geo.self_intersections(p))
    attempts = 0
    while len(p) < target_n:
        if attempts >= max_attempts:
            raise GrowthInfeasible(f"insertion budget of {max_attempts} exhausted")
        attempts += 1
        try:
            grown = safe_split(p, g, rng, bend=0.25)
            if len(geo.self_intersections(grown)) != base:
                grown = safe_split(p, g, rng, bend=0.0)
        except MutationInfeasible as exc:
            raise GrowthInfeasible(str(exc)) from exc
        except GeometryError:
            continue
        if len(geo.self_intersections(grown)) == base:
            p = grown
    return p


# -- signatures and dedup --------------------------------------------------------

def signature(p, samples=SIGNATURE_SAMPLES):
    """Arc-length resampling normalized to the unit bounding box."""
    pts = resample(p, samples)
    lo = pts.min(axis=0)
    span = float(np.ptp(pts, axis=0).max())
    return (pts - lo) / span


def signature_distance(a, b):
    """Mean pointwise distance, minimized over the two traversal orientations."""
    fwd = float(np.mean(np.hypot(*(a - b).T)))
    rev = float(np.mean(np.hypot(*(a - b[::-1]).T)))
    return min(fwd, rev)


def shape_distance(p, q, samples=SIGNATURE_SAMPLES):
    return signature_distance(signature(p, samples), signature(q, samples))


def dedup(records, threshold=0.05, max_reps=25):
    """Greedy in id order: keep a record iff it is farther than ``threshold``
    from every kept record, up to ``max_reps``."""
    kept, sigs = [], []
    for rec in sorted(records, key=lambda r: r.id):
        if len(kept) >= max_reps:
            break
        sig = signature(rec.vertices)
        if all(signature_distance(sig, s) > threshold for s in sigs):
            kept.append(rec)
            sigs.append(sig)
    return kept


# -- cell and grid drivers ---------------------------------------------------------

@dataclass
class CellResult:
    cell: CellTarget
    records: list
    status: str
    attempts: int
    requested: int = 0
    skipped: bool = False
    rejections: dict = field(default_factory=dict)


@dataclass
class GenerationOptions:
    budget: int = 20000
    dedup_threshold: float = 0.05
    max_reps: int = 25
    mutation_rate: float = 0.25
    bootstrap_sources: tuple = ()
    bootstrap: bool = False

    def to_dict(self):
        d = asdict(self)
        d["bootstrap_sources"] = len(self.bootstrap_sources)
        return d


_STRUCTURED = ("bowtie", "rail_weave", "split_star", "braid", "knot_template")
_MUTATIONS_IN_LOOP = ("anisotropic_scale", "local_warp", "extend_endpoint", "permute_crossings")


def _choose_family(cell, rng, bins, sources):
    structured = [f for f in _STRUCTURED if FAMILIES[f].reachable(cell, bins)]
    if sources and rng.random() < 0.5:
        return "bootstrap"
    walk_ok = FAMILIES["proposal_walk"].reachable(cell, bins)
    if walk_ok and (not structured or rng.random() < 0.4):
        return "proposal_walk"
    if structured:
        return structured[int(rng.integers(0, len(structured)))]
    return None


def generate_cell(cell, g=geo.GeometryConfig(), options=GenerationOptions(), master_seed=0,
                  bins=geo.DEFAULT_BINS, skipped=False):
    """Fill one cell's quota under its seed schedule.

    Accepted candidates are filtered against previously kept ones with the
    signature threshold, so the output needs no further dedup. Records carry
    provisional ids (their attempt index) until the grid driver renumbers.
    """
    quota = min(cell.quota, options.max_reps)
    if skipped:
        return CellResult(cell, [], "infeasible", 0, quota, skipped=True)
    sources = [s for s in options.bootstrap_sources
               if s.tbin == cell.tbin and s.sbin == cell.sbin and s.n_points < cell.n_points]
    kept, sigs = [], []
    rejections = {}
    attempt = 0
    while attempt < options.budget and len(kept) < quota:
        seed = attempt_seed(master_seed, cell.tbin, cell.sbin, cell.n_points, attempt)
        attempt += 1
        rng = _rng(seed)
        family = _choose_family(cell, rng, bins, sources)
        if family is None:
            rejections["no_family"] = rejections.get("no_family", 0) + 1
            continue
        provenance = None
        try:
            if family == "bootstrap":
                src = sources[int(rng.integers(0, len(sources)))]
                provenance = src.id
                cand = bootstrap_grow(src, cell.n_points, g, seed=int(rng.integers(0, 2**63)))
            else:
                cand = propose(family, cell, int(rng.integers(0, 2**63)), g, bins)
                if rng.random() < options.mutation_rate:
                    kind = _MUTATIONS_IN_LOOP[int(rng.integers(0, len(_MUTATIONS_IN_LOOP)))]
                    cand = mutate(cand, kind, int(rng.integers(0, 2**63)), g)
        except (ConstructionFailed, MutationInfeasible, GrowthInfeasible, FamilyInapplicable, GeometryError) as exc:
            key = type(exc).__name__
            rejections[key] = rejections.get(key, 0) + 1
            continue
        fitted, metrics, reason = evaluate(cand, cell, g, bins)
        if reason is not None:
            rejections[reason] = rejections.get(reason, 0) + 1
            continue
        sig = signature(fitted)
        if any(signature_distance(sig, s) <= options.dedup_threshold for s in sigs):
            rejections["duplicate"] = rejections.get("duplicate", 0) + 1
            continue
        t, c, tb, sb = metrics
        kept.append(BackboneRecord(attempt - 1, family, fitted, t, c, tb, sb, cell.n_points, seed, provenance))
        sigs.append(sig)
    if len(kept) >= quota:
        status = "filled"
    elif kept:
        status = "partial"
    else:
        status = "infeasible"
    log.info("cell %s: %s (%d/%d after %d attempts)", cell.key, status, len(kept), quota, attempt)
    return CellResult(cell, kept, status, attempt, quota, rejections=rejections)


@dataclass
class GridSpec:
    tbins: tuple = (0, 1, 2, 3, 4, 5)
    sbins: tuple = (0, 1, 2, 3, 4, 5)
    n_points: tuple = (9, 11, 13, 15, 17)
    quota: int = 10
    skip: tuple = ()
    cells: tuple = ()

    def targets(self):
        if self.cells:
            return [CellTarget(int(t), int(s), int(n), self.quota) for t, s, n in self.cells]
        return [CellTarget(t, s, n, self.quota) for n in self.n_points for s in self.sbins for t in self.tbins]

    def is_skipped(self, cell):
        for entry in self.skip:
            entry = tuple(entry)
            if entry == (cell.tbin, cell.sbin) or entry == cell.key:
                return True
        return False

    def to_dict(self):
        return {
            "tbins": list(self.tbins),
            "sbins": list(self.sbins),
            "n_points": list(self.n_points),
            "quota": self.quota,
            "skip": [list(s) for s in self.skip],
            "cells": [list(c) for c in self.cells],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            tbins=tuple(d.get("tbins", cls.tbins)),
            sbins=tuple(d.get("sbins", cls.sbins)),
            n_points=tuple(d.get("n_points", cls.n_points)),
            quota=int(d.get("quota", cls.quota)),
            skip=tuple(tuple(s) for s in d.get("skip", ())),
            cells=tuple(tuple(c) for c in d.get("cells", ())),
        )


BUILTIN_GRIDS = {
    "default": GridSpec(),
    "small": GridSpec(tbins=(0, 1, 2), sbins=(0, 1, 2), n_points=(9,), quota=4),
}


def _generate_cell_job(args):
    cell, g, options, master_seed, bins, skipped = args
    return generate_cell(cell, g, options, master_seed, bins, skipped)


def generate_grid(grid, g=geo.GeometryConfig(), options=GenerationOptions(), master_seed=0,
                  bins=geo.DEFAULT_BINS, jobs=1):
    """Generate every cell of ``grid``; returns ``(records, results)``.

    Cells are independent so they may run in worker processes; records are
    renumbered in grid order afterwards, which makes the output identical for
    any ``jobs``. With ``options.bootstrap`` the point-count levels run in
    ascending order and each level may grow records of the smaller levels.
    """
    cells = grid.targets()
    levels = sorted({c.n_points for c in cells}) if options.bootstrap else [None]
    by_key = {}
    sources = list(options.bootstrap_sources)
    pool = ProcessPoolExecutor(max_workers=jobs) if jobs > 1 and len(cells) > 1 else None
    try:
        for level in levels:
            todo = [c for c in cells if level is None or c.n_points == level]
            opts = options
            if options.bootstrap:
                opts = GenerationOptions(options.budget, options.dedup_threshold, options.max_reps,
                                         options.mutation_rate, tuple(sources), False)
            args = [(c, g, opts, master_seed, bins, grid.is_skipped(c)) for c in todo]
            results = list(pool.map(_generate_cell_job, args)) if pool else [_generate_cell_job(a) for a in args]
            for c, res in zip(todo, results):
                by_key[c.key] = res
                if options.bootstrap:
                    # provisional ids must be unique across levels to serve as provenance
                    for rec in res.records:
                        rec.id = rec.n_points * 10_000_000 + rec.tbin * 1_000_000 + rec.sbin * 100_000 + rec.id
                    sources.extend(res.records)
    finally:
        if pool:
            pool.shutdown()
    results = [by_key[c.key] for c in cells]
    records = []
    remap = {}
    for res in results:
        for rec in sorted(res.records, key=lambda r: r.id):
            remap[rec.id] = len(records)
            rec.id = len(records)
            records.append(rec)
    for rec in records:
        if options.bootstrap and rec.provenance in remap:
            rec.provenance = remap[rec.provenance]
    return records, results


COVERAGE_HEADER = ("tbin", "sbin", "n_points", "requested", "accepted", "status")


def coverage_rows(results):
    rows = []
    for res in results:
        status = "skipped" if res.skipped else res.status
        rows.append((res.cell.tbin, res.cell.sbin, res.cell.n_points, res.requested, len(res.records), status))
    return rows


def coverage_from_records(records, grid, max_reps=GenerationOptions.max_reps):
    """Rebuild the coverage table from emitted records alone."""
    counts = {}
    for r in records:
        counts[(r.tbin, r.sbin, r.n_points)] = counts.get((r.tbin, r.sbin, r.n_points), 0) + 1
    rows = []
    for cell in grid.targets():
        k = counts.get(cell.key, 0)
        quota = min(cell.quota, max_reps)
        if grid.is_skipped(cell):
            status = "skipped"
        elif k >= quota:
            status = "filled"
        elif k:
            status = "partial"
        else:
            status = "infeasible"
        rows.append((cell.tbin, cell.sbin, cell.n_points, quota, k, status))
    return rows


def verify_record(rec, g=geo.GeometryConfig(), bins=geo.DEFAULT_BINS):
    """Problems found when recomputing a record from its vertices ([] if consistent)."""
    problems = []
    v = np.asarray(rec.vertices, dtype=float)
    if len(v) != rec.n_points:
        problems.append(f"vertex count {len(v)} != n_points {rec.n_points}")
    try:
        t, c, tb, sb = measure(v, g, bins)
    except GeometryError as exc:
        return problems + [f"unmeasurable: {exc}"]
    if not math.isclose(t, rec.tortuosity, rel_tol=1e-9, abs_tol=1e-9):
        problems.append(f"tortuosity {rec.tortuosity} != recomputed {t}")
    if c != rec.crossings:
        problems.append(f"crossings {rec.crossings} != recomputed {c}")
    if rec.regime is None and (tb, sb) != (rec.tbin, rec.sbin):
        problems.append(f"bins {(rec.tbin, rec.sbin)} != recomputed {(tb, sb)}")
    report = geo.check_constraints(v, g, has_glyphs=True)
    if not report.passed:
        problems.append("constraint violations: " + ", ".join(report.rules()))
    return problems


def write_backbones(path, records):
    jsonio.write_jsonl(path, (r.to_json() for r in records))


def read_backbones(path):
    keys = ("id", "family", "vertices", "tortuosity", "crossings", "tbin", "sbin", "n_points", "seed")
    return [BackboneRecord.from_json(d) for d in jsonio.read_jsonl(path, required=keys)]


def write_coverage(path, rows):
    jsonio.write_csv(path, COVERAGE_HEADER, rows)
