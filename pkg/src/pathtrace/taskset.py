"""Task instances: gold sequences, prompts, structural metadata, reading-order
layouts and the task JSONL format."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import geometry as geo
from . import jsonio
from .errors import LayoutInfeasible, MalformedLine, OutOfRange, PlacementInfeasible, SchemaMismatch
from .generator import BackboneRecord
from .raster import rasterize
from .renderer import (
    ConfoundConfig,
    ConfoundSet,
    SceneSpec,
    assign_glyphs,
    glyph_token,
    place_confounds,
    render_svg,
)

log = logging.getLogger(__name__)

SCHEMA_VERSION = "pathtrace.task/1"
REGIMES = ("ltr_tb", "rtl_tb", "ttb_rl", "ttb_lr")

SYSTEM_PROMPT = (
    "You are a strict evaluation function. Output ONLY the final answer in the exact format requested. "
    "No preamble, no explanation, no coordinates, no bullets, no extra lines, no markdown/code fences."
)

USER_TEMPLATE = (
    "You are shown a single polyline path with colored shape markers at each vertex. "
    "The path is a single continuous polyline (no branches). There is exactly one next marker at each step.\n"
    "\n"
    'The START of the path is the marker "{START_TOKEN}". This exact combo appears only once. '
    "Starting from START, follow the polyline continuously and list every marker you encounter in order "
    "until the path ends.\n"
    "\n"
    "You must output EXACTLY {N} markers. If you are uncertain, still give your best guess---do not stop early.\n"
    "\n"
    "Each marker must be written exactly as: <color> <shape> (lowercase). "
    "Allowed colors: red, blue, green, orange, yellow, cyan, purple, brown. "
    "Allowed shapes: circle, square, tri, star, plus.\n"
    "\n"
    "Reply ONLY as a comma-separated list of exactly {N} items. No extra words. No markdown/code fences."
)


def build_prompt(n, start_token="red square"):
    """(system, user) prompt text for an ``n``-marker task."""
    if n < 1:
        raise ValueError("n must be >= 1")
    user = USER_TEMPLATE.replace("{START_TOKEN}", start_token).replace("{N}", str(int(n)))
    return SYSTEM_PROMPT, user


def gold_sequence(record, glyphs):
    v = record.vertices if hasattr(record, "vertices") else record
    if len(v) != len(glyphs):
        raise ValueError(f"{len(glyphs)} glyphs for {len(v)} vertices")
    return [glyph_token(g) for g in glyphs]


def _crossings(record):
    return geo.self_intersections(record.vertices if hasattr(record, "vertices") else record)


def crossing_decision_tokens(record, crossings=None):
    """Second-pass anchors: the vertex reached right after re-traversing each crossing."""
    crossings = _crossings(record) if crossings is None else crossings
    return sorted({c.second_pass_vertex for c in crossings})


def crossing_first_pass_tokens(record, crossings=None):
    crossings = _crossings(record) if crossings is None else crossings
    return sorted({c.first_pass_vertex for c in crossings})


def lr_flag(record, tol=1e-9):
    """True for left-to-right net displacement, False for right-to-left, None if tied."""
    v = np.asarray(record.vertices if hasattr(record, "vertices") else record, dtype=float)
    dx = float(v[-1, 0] - v[0, 0])
    if abs(dx) <= tol:
        return None
    return dx > 0


# -- reading-order layouts ---------------------------------------------------------

def lane_sizes(n_points, lane_count):
    base, extra = divmod(n_points, lane_count)
    return [base + (1 if k < extra else 0) for k in range(lane_count)]


def build_reading_order(regime, lane_count, n_points, g=geo.GeometryConfig(), seed=0, jitter_px=None):
    """Lane-structured path for one reading-order regime.

    Lanes span the drawable area; lane ends are inset by a seeded jitter so
    the connectors vary. Returns ``(vertices, lanes)`` where ``lanes[i]`` is
    the lane index of vertex ``i``.
    """
    if regime not in REGIMES:
        raise ValueError(f"unknown regime {regime!r}")
    if lane_count < 1 or n_points < lane_count:
        raise ValueError("need 1 <= lane_count <= n_points")
    sizes = lane_sizes(n_points, lane_count)
    lo, hi = g.margin_px, g.view_px - g.margin_px
    span = hi - lo
    S = g.spacing_S
    jitter_px = 0.5 * S if jitter_px is None else jitter_px
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), REGIMES.index(regime), lane_count, n_points]))
    if lane_count > 1 and span / (lane_count - 1) < S:
        raise LayoutInfeasible(f"{lane_count} lanes cannot keep spacing {S} px")
    cross = [lo + span / 2] if lane_count == 1 else list(lo + np.arange(lane_count) * span / (lane_count - 1))
    pts, lanes = [], []
    for k, m in enumerate(sizes):
        a, b = lo + rng.uniform(0, jitter_px), hi - rng.uniform(0, jitter_px)
        if m > 1 and (b - a) / (m - 1) < S:
            raise LayoutInfeasible(f"lane of {m} vertices cannot keep spacing {S} px")
        along = np.linspace(a, b, m) if m > 1 else np.array([(a + b) / 2])
        if regime == "rtl_tb":
            along = along[::-1]
        # horizontal lanes run top to bottom; vertical lanes left-to-right or right-to-left
        if regime in ("ltr_tb", "rtl_tb"):
            lane_pts = [(x, cross[k]) for x in along]
        elif regime == "ttb_lr":
            lane_pts = [(cross[k], y) for y in along]
        else:
            lane_pts = [(cross[lane_count - 1 - k], y) for y in along]
        pts.extend(lane_pts)
        lanes.extend([k] * m)
    return np.asarray(pts, dtype=float), lanes


def reading_order_record(regime, lane_count, n_points, g=geo.GeometryConfig(), seed=0, record_id=0):
    """Reading-order layout wrapped as a BackboneRecord; raises LayoutInfeasible
    if the layout fails the constraint suite."""
    v, _ = build_reading_order(regime, lane_count, n_points, g, seed)
    report = geo.check_constraints(v, g, has_glyphs=True)
    if not report.passed:
        raise LayoutInfeasible(f"{regime}/{lane_count} lanes/{n_points} pts violates {report.rules()}")
    crossings = geo.crossing_count(v)
    t = geo.tortuosity(v, g.epsilon_chord)
    try:
        tb = geo.bin_tortuosity(t)
    except OutOfRange:
        tb = -1
    return BackboneRecord(record_id, "reading_order", v, t, crossings, tb, geo.bin_intersections(crossings),
                          n_points, int(seed), None, regime, lane_count)


def regime_violations(vertices, lanes, regime):
    """Coordinate assertions for a regime; [] when the layout is correct."""
    v = np.asarray(vertices, dtype=float)
    lanes = np.asarray(lanes)
    problems = []
    horizontal = regime in ("ltr_tb", "rtl_tb")
    along, across = (0, 1) if horizontal else (1, 0)
    sign = -1 if regime == "rtl_tb" else 1
    means = []
    for k in sorted(set(lanes.tolist())):
        lane = v[lanes == k]
        d = np.diff(lane[:, along]) * sign
        if np.any(d <= 0):
            problems.append(f"lane {k} not monotone along its direction")
        if np.ptp(lane[:, across]) > 1e-9:
            problems.append(f"lane {k} not straight")
        means.append(lane[:, across].mean())
    order = np.diff(means)
    want = -1 if regime == "ttb_rl" else 1
    if len(order) and np.any(order * want <= 0):
        problems.append("lane order wrong")
    return problems


# -- task instances ------------------------------------------------------------------

@dataclass
class TaskInstance:
    task_id: str
    image: str
    svg: str
    start_token: str
    gold: list
    n: int
    prompt_system: str
    prompt_user: str
    meta: dict = field(default_factory=dict)
    glyphs: list = field(default_factory=list)
    confounds: dict = field(default_factory=dict)
    vertices: list = field(default_factory=list)
    schema_version: str = SCHEMA_VERSION

    def to_json(self):
        return asdict(self)

    @classmethod
    def from_json(cls, d):
        return cls(**d)


def _variant_seed(master_seed, record_id, variant, purpose):
    ss = np.random.SeedSequence([int(master_seed), int(record_id), int(variant), purpose])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def make_task(record, variant=0, confound_k=0, g=geo.GeometryConfig(), master_seed=0, benchmark="main",
              confound_cfg=ConfoundConfig(), image_dir=None, spec=None, raster=True):
    """Build one TaskInstance (and its SVG/PNG files when ``image_dir`` is set)."""
    spec = spec or SceneSpec.from_geometry(g)
    glyph_seed = _variant_seed(master_seed, record.id, variant, 1)
    confound_seed = _variant_seed(master_seed, record.id, variant, 2)
    glyphs = assign_glyphs(record.n_points, glyph_seed)
    confounds = ConfoundSet()
    if confound_k:
        try:
            confounds = place_confounds(record, confound_k, g, confound_seed, confound_cfg)
        except PlacementInfeasible:
            log.warning("record %s: no confound fits, task built without confounds", record.id)
            confounds = ConfoundSet([], [], confound_k)
    gold = gold_sequence(record, glyphs)
    crossings = geo.self_intersections(record.vertices)
    system, user = build_prompt(len(gold), gold[0])
    task_id = f"{benchmark[:2]}-{record.id:06d}-{variant:02d}"
    svg = render_svg(record, glyphs, confounds, spec)
    image = f"{task_id}.png"
    svg_name = f"{task_id}.svg"
    if image_dir is not None:
        image_dir = Path(image_dir)
        image_dir.mkdir(parents=True, exist_ok=True)
        (image_dir / svg_name).write_text(svg, encoding="utf-8")
        if raster:
            rasterize(svg, image_dir / image)
    meta = {
        "backbone_id": record.id,
        "family": record.family,
        "tbin": record.tbin,
        "sbin": record.sbin,
        "n_points": record.n_points,
        "tortuosity": float(record.tortuosity),
        "crossings": len(crossings),
        "confound_requested": int(confound_k),
        "confound_count": confounds.k,
        "crossing_tokens": crossing_decision_tokens(record, crossings),
        "crossing_first_pass_tokens": crossing_first_pass_tokens(record, crossings),
        "confound_encounters": confounds.encounter_token_indices,
        "lr_flag": lr_flag(record),
        "benchmark": benchmark,
        "regime": record.regime,
        "lane_count": record.lane_count,
        "glyph_seed": glyph_seed,
        "confound_seed": confound_seed,
    }
    return TaskInstance(
        task_id=task_id,
        image=image,
        svg=svg_name,
        start_token=gold[0],
        gold=gold,
        n=len(gold),
        prompt_system=system,
        prompt_user=user,
        meta=meta,
        glyphs=[list(x) for x in glyphs],
        confounds=confounds.to_json(),
        vertices=[[float(x), float(y)] for x, y in record.vertices],
    )


def build_tasks(records, variants=1, confound_ks=(0,), g=geo.GeometryConfig(), master_seed=0,
                benchmark="main", confound_cfg=ConfoundConfig(), image_dir=None, raster=True):
    """Tasks for every record; variant v of a record uses confound_ks[v % len]."""
    tasks = []
    for rec in records:
        for v in range(variants):
            k = confound_ks[v % len(confound_ks)]
            tasks.append(make_task(rec, v, k, g, master_seed, benchmark, confound_cfg, image_dir, raster=raster))
    return tasks


_REQUIRED = ("task_id", "gold", "n", "prompt_system", "prompt_user", "meta", "schema_version")


def write_tasks(path, tasks):
    jsonio.write_jsonl(path, (t.to_json() for t in tasks))


def read_tasks(path):
    out = []
    for lineno, d in enumerate(jsonio.read_jsonl(path, required=_REQUIRED), start=1):
        if d.get("schema_version") != SCHEMA_VERSION:
            raise SchemaMismatch(f"{path}: schema_version {d.get('schema_version')!r}, expected {SCHEMA_VERSION!r}")
        try:
            out.append(TaskInstance.from_json(d))
        except TypeError as exc:
            raise MalformedLine(str(path), lineno, str(exc)) from None
    return out
