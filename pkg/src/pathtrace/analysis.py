"""Aggregate tables and difficulty analyses over eval + task records.

Every function takes eval records for any number of models and the task
records they refer to; results are grouped per model where relevant and do
not depend on input order.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientData, JoinFailure, RankDeficient

REGIMES = ("ltr_tb", "rtl_tb", "ttb_rl", "ttb_lr")
CONFOUND_BUCKETS = ((0, 0, "0"), (1, 2, "1-2"), (3, math.inf, "3+"))


def _get(obj, key):
    return obj[key] if isinstance(obj, dict) else getattr(obj, key)


def _meta(task):
    return _get(task, "meta")


def join(evals, tasks):
    """Pair every eval record with its task; JoinFailure lists orphans."""
    by_id = {_get(t, "task_id"): t for t in tasks}
    orphans = sorted({e.task_id for e in evals if e.task_id not in by_id})
    if orphans:
        raise JoinFailure(orphans)
    return [(e, by_id[e.task_id]) for e in sorted(evals, key=lambda e: (e.model, e.task_id))]


def by_model(pairs):
    out = defaultdict(list)
    for e, t in pairs:
        out[e.model].append((e, t))
    return dict(sorted(out.items()))


def confound_bucket(count):
    for lo, hi, label in CONFOUND_BUCKETS:
        if lo <= count <= hi:
            return label
    raise ValueError(count)


# -- cell table ----------------------------------------------------------------

CELL_HEADER = ("model", "tbin", "sbin", "n_points", "confound_bucket", "n_tasks", "value", "status")


def cell_table(evals, tasks, metric="em", levels=None):
    """Unweighted mean of ``metric`` per (tbin, sbin, n_points, confound bucket).

    Cells of the full level product (observed levels, or ``levels`` =
    (tbins, sbins, n_points, buckets)) with no tasks are reported as absent.
    """
    if metric not in ("em", "tok_acc"):
        raise ValueError(f"unknown metric {metric!r}")
    pairs = join(evals, tasks)
    rows = []
    for model, group in by_model(pairs).items():
        acc = defaultdict(list)
        for e, t in group:
            m = _meta(t)
            key = (m["tbin"], m["sbin"], m["n_points"], confound_bucket(m.get("confound_count", 0)))
            acc[key].append(float(getattr(e, metric)))
        if levels is None:
            tb = sorted({k[0] for k in acc})
            sb = sorted({k[1] for k in acc})
            npts = sorted({k[2] for k in acc})
            buckets = [b[2] for b in CONFOUND_BUCKETS if any(k[3] == b[2] for k in acc)]
        else:
            tb, sb, npts, buckets = levels
        for n in npts:
            for b in buckets:
                for s in sb:
                    for t in tb:
                        vals = acc.get((t, s, n, b))
                        if vals:
                            rows.append((model, t, s, n, b, len(vals), float(np.mean(vals)), "present"))
                        else:
                            rows.append((model, t, s, n, b, 0, math.nan, "absent"))
    return rows


# -- windows -------------------------------------------------------------------

@dataclass
class WindowCurve:
    model: str
    anchor: str
    k: int
    offsets: list
    mean: list
    count: list
    control_mean: list
    control_count: list

    def rows(self):
        return [(self.model, self.anchor, self.k, o, m, c, cm, cc)
                for o, m, c, cm, cc in zip(self.offsets, self.mean, self.count, self.control_mean, self.control_count)]


WINDOW_HEADER = ("model", "anchor", "k", "offset", "mean", "count", "control_mean", "control_count")


def _position_table(pairs):
    """Per absolute position: (sum correct, count) over the given records."""
    sums, counts = defaultdict(float), defaultdict(int)
    for e, _ in pairs:
        for i, c in enumerate(e.per_position):
            sums[i] += c == "1"
            counts[i] += 1
    return sums, counts


def _window(model, anchor_name, k, treated, controls, w):
    """``treated`` is a list of (eval, anchor index)."""
    offsets = list(range(-w, w + 1))
    ctrl_sum, ctrl_cnt = _position_table(controls)
    mean, count, cmean, ccount = [], [], [], []
    for o in offsets:
        hits, n = 0, 0
        freq = defaultdict(int)
        for e, a in treated:
            pos = a + o
            if 0 <= pos < len(e.per_position):
                hits += e.per_position[pos] == "1"
                n += 1
                freq[pos] += 1
        mean.append(hits / n if n else math.nan)
        count.append(n)
        num = den = 0.0
        used = 0
        for pos, f in freq.items():
            if ctrl_cnt.get(pos):
                num += f * ctrl_sum[pos] / ctrl_cnt[pos]
                den += f
                used += ctrl_cnt[pos]
        cmean.append(num / den if den else math.nan)
        ccount.append(used)
    return WindowCurve(model, anchor_name, k, offsets, mean, count, cmean, ccount)


def crossing_windows(evals, tasks, k=1, w=3, anchor="second_pass"):
    """Accuracy around the k-th crossing decision token, with a control from
    zero-crossing tasks matched on absolute token position."""
    key = "crossing_tokens" if anchor == "second_pass" else "crossing_first_pass_tokens"
    curves = []
    for model, group in by_model(join(evals, tasks)).items():
        treated = [(e, _meta(t)[key][k - 1]) for e, t in group if len(_meta(t)[key]) >= k]
        controls = [(e, t) for e, t in group if _meta(t)["crossings"] == 0]
        if not treated:
            raise InsufficientData(f"{model}: no task with at least {k} crossings")
        if not controls:
            raise InsufficientData(f"{model}: no zero-crossing control tasks")
        curves.append(_window(model, anchor, k, treated, controls, w))
    return curves


# -- matched prefix ------------------------------------------------------------

PREFIX_HEADER = ("Model", "Intersecting prefix exact", "Matched no cross prefix exact",
                 "Delta vs matched no cross", "Mean pre len")


def matched_prefix_control(evals, tasks):
    """Prefix exactness before the first crossing versus zero-crossing tasks
    at the same prefix lengths. Percentages and percentage points."""
    rows = []
    for model, group in by_model(join(evals, tasks)).items():
        treated = [(e, _meta(t)["crossing_tokens"][0]) for e, t in group if _meta(t)["crossing_tokens"]]
        controls = [e for e, t in group if _meta(t)["crossings"] == 0]
        if not treated or not controls:
            raise InsufficientData(f"{model}: need intersecting and zero-crossing tasks")
        lengths = defaultdict(int)
        for _, L in treated:
            lengths[L] += 1
        treat_rate = float(np.mean([e.prefix_exact(L) for e, L in treated]))
        num = den = 0.0
        for L, f in lengths.items():
            pool = [e.prefix_exact(L) for e in controls if len(e.per_position) >= L]
            if pool:
                num += f * float(np.mean(pool))
                den += f
        if not den:
            raise InsufficientData(f"{model}: controls too short for the prefix lengths")
        base = num / den
        mean_len = float(np.mean([L for _, L in treated]))
        rows.append((model, 100 * treat_rate, 100 * base, 100 * (treat_rate - base), mean_len))
    return rows


# -- confounds -----------------------------------------------------------------

CUMULATIVE_HEADER = ("model", "encounters_before", "mean", "count")


@dataclass
class ConfoundCurves:
    local: WindowCurve
    cumulative: list = field(default_factory=list)  # (bucket, mean, count)


def confound_curves(evals, tasks, w=3):
    out = []
    for model, group in by_model(join(evals, tasks)).items():
        treated = [(e, min(_meta(t)["confound_encounters"])) for e, t in group if _meta(t).get("confound_encounters")]
        controls = [(e, t) for e, t in group if _meta(t).get("confound_count", 0) == 0]
        if not treated and not controls:
            raise InsufficientData(f"{model}: no tasks")
        local = (_window(model, "first_encounter", 1, treated, controls, w)
                 if treated and controls else None)
        sums, counts = defaultdict(float), defaultdict(int)
        for e, t in group:
            enc = np.sort(np.asarray(_meta(t).get("confound_encounters", []), dtype=int))
            for i, c in enumerate(e.per_position):
                b = int(np.searchsorted(enc, i, side="left"))
                sums[b] += c == "1"
                counts[b] += 1
        cum = [(b, sums[b] / counts[b], counts[b]) for b in sorted(counts)]
        out.append((model, ConfoundCurves(local, cum)))
    return out


# -- regression ------------------------------------------------------------------

@dataclass
class RegressionResult:
    model: str
    outcome: str
    columns: list
    coef: np.ndarray
    se: np.ndarray
    n: int
    baselines: dict

    def as_dict(self):
        return dict(zip(self.columns, self.coef))

    def rows(self):
        return [(self.model, self.outcome, c, float(b), float(s), self.n) for c, b, s in zip(self.columns, self.coef, self.se)]


OLS_HEADER = ("model", "outcome", "term", "coef_pts", "se_pts", "n")


def design_matrix(metas, include_lr=False):
    """Dummy-coded design; returns (X, columns, baselines)."""
    cols = ["intercept"]
    blocks = [np.ones(len(metas))]
    baselines = {}
    for factor in ("sbin", "tbin", "n_points"):
        vals = np.array([m[factor] for m in metas])
        levels = sorted(set(vals.tolist()))
        if len(levels) < 2:
            raise RankDeficient([f"{factor} (single level {levels})"])
        baselines[factor] = levels[0]
        for lv in levels[1:]:
            cols.append(f"{factor}={lv}")
            blocks.append((vals == lv).astype(float))
    if include_lr:
        lr = np.array([bool(m["lr_flag"]) for m in metas], dtype=float)
        if lr.min() == lr.max():
            raise RankDeficient(["LR (constant)"])
        baselines["lr"] = "RL"
        cols.append("LR")
        blocks.append(lr)
    return np.column_stack(blocks), cols, baselines


def ols_fit(X, y, columns=None):
    """Least squares via QR. Returns (coef, se); RankDeficient on a singular design."""
    n, p = X.shape
    if n <= p:
        raise RankDeficient(columns or list(range(p)))
    Q, R = np.linalg.qr(X)
    d = np.abs(np.diag(R))
    tol = max(n, p) * np.finfo(float).eps * (d.max() if d.size else 0)
    bad = np.flatnonzero(d <= tol)
    if bad.size:
        names = columns or list(range(p))
        raise RankDeficient([names[i] for i in bad])
    coef = np.linalg.solve(R, Q.T @ y)
    resid = y - X @ coef
    sigma2 = float(resid @ resid) / (n - p)
    Rinv = np.linalg.solve(R, np.eye(p))
    se = np.sqrt(np.maximum(sigma2 * np.sum(Rinv**2, axis=1), 0.0))
    return coef, se


def ols(evals, tasks, include_lr=False, outcome="tok_acc"):
    """Per-model pooled regression of the outcome (percentage points) on
    crossing-regime, tortuosity-bin and point-count dummies (+ LR)."""
    results = []
    for model, group in by_model(join(evals, tasks)).items():
        if include_lr:
            group = [(e, t) for e, t in group if _meta(t).get("lr_flag") is not None]
        metas = [_meta(t) for _, t in group]
        y = 100.0 * np.array([float(getattr(e, outcome)) for e, _ in group])
        X, cols, base = design_matrix(metas, include_lr)
        coef, se = ols_fit(X, y, cols)
        results.append(RegressionResult(model, outcome, cols, coef, se, len(y), base))
    return results


# -- reading order -----------------------------------------------------------------

REGIME_HEADER = ("model", "regime", "macro_tok_acc", "delta_pts")


def regime_deltas(evals, tasks, metric="tok_acc"):
    """Per model: macro metric per regime over (lane_count, n_points), minus
    the model's mean over regimes, in percentage points."""
    rows = []
    for model, group in by_model(join(evals, tasks)).items():
        cells = defaultdict(list)
        for e, t in group:
            m = _meta(t)
            if m.get("regime") is None:
                continue
            cells[(m["regime"], m["lane_count"], m["n_points"])].append(float(getattr(e, metric)))
        grid = sorted({(k[1], k[2]) for k in cells})
        present = [r for r in REGIMES if any(k[0] == r for k in cells)]
        if len(present) < 2:
            raise InsufficientData(f"{model}: reading-order tasks cover fewer than two regimes")
        macro = {}
        for r in present:
            missing = [c for c in grid if (r,) + c not in cells]
            if missing:
                raise InsufficientData(f"{model}: regime {r} lacks (lane_count, n_points) cells {missing}")
            macro[r] = float(np.mean([np.mean(cells[(r,) + c]) for c in grid]))
        center = float(np.mean(list(macro.values())))
        for r in present:
            rows.append((model, r, 100 * macro[r], 100 * (macro[r] - center)))
    return rows


# -- answer rates ----------------------------------------------------------------

def answer_rate_tables(evals, tasks, group_keys=("model",)):
    """Rows of (group..., n, answer_rate, em_overall, em_conditional); the
    conditional EM is NaN when nothing in the group was answered."""
    groups = defaultdict(list)
    for e, t in join(evals, tasks):
        key = tuple(e.model if k == "model" else _meta(t).get(k) for k in group_keys)
        groups[key].append(e)
    rows = []
    for key in sorted(groups, key=lambda k: tuple(str(x) for x in k)):
        es = groups[key]
        n = len(es)
        answered = [e for e in es if e.answered]
        rate = len(answered) / n
        overall = sum(e.em for e in es) / n
        cond = sum(e.em for e in answered) / len(answered) if answered else math.nan
        rows.append(key + (n, rate, overall, cond))
    return rows


def answer_rate_header(group_keys=("model",)):
    return tuple(group_keys) + ("n", "answer_rate", "em_overall", "em_conditional")
