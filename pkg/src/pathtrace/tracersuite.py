"""End-to-end experiment runner: generate, render, build tasks, evaluate with
synthetic or endpoint agents, analyse, and record a digest manifest."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import analysis as an
from . import config as cf
from . import jsonio, plotting
from .errors import InsufficientData, RankDeficient, ValidationFailure
from .generator import coverage_rows, generate_grid, read_backbones, verify_record, write_backbones, write_coverage
from .harness import read_evals, run_eval
from .taskset import REGIMES, build_tasks, read_tasks, reading_order_record, write_tasks

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def directory_digests(root, exclude=(MANIFEST,)):
    root = Path(root)
    out = {}
    for p in sorted(root.rglob("*")):
        rel = p.relative_to(root).as_posix()
        if p.is_file() and rel not in exclude and not rel.endswith(".tmp"):
            out[rel] = file_digest(p)
    return out


def reading_order_records(spec, g, master_seed):
    """Records for every regime x lane count x point count x layout seed."""
    records = []
    for regime in spec.get("regimes", list(REGIMES)):
        for lanes in spec.get("lanes", [1, 2, 3]):
            for n in spec.get("n_points", [9, 15]):
                for k in range(int(spec.get("layouts", 1))):
                    seed = master_seed * 1000 + k
                    records.append(reading_order_record(regime, lanes, n, g, seed, len(records)))
    return records


def _tasks_job(args):
    chunk, kw = args
    return build_tasks(chunk, **kw)


def _build_tasks_parallel(records, jobs, **kw):
    if jobs <= 1 or len(records) < 2:
        return build_tasks(records, **kw)
    size = math.ceil(len(records) / jobs)
    chunks = [records[i:i + size] for i in range(0, len(records), size)]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        parts = list(pool.map(_tasks_job, [(c, kw) for c in chunks]))
    return [t for part in parts for t in part]


def run_analyses(evals, tasks, kinds, out_dir, window=3, max_k=4, q_confound=None, strict=False):
    """Write one CSV (and figure where meaningful) per analysis kind.

    Analyses whose inputs are missing are skipped; returns ``{kind: status}``.
    A rank-deficient regression design is also a skip unless ``strict``.
    """
    out_dir = Path(out_dir)
    fig_dir = out_dir / "figures"
    status = {}
    for kind in kinds:
        try:
            if kind == "cells":
                for metric in ("em", "tok_acc"):
                    rows = an.cell_table(evals, tasks, metric)
                    jsonio.write_csv(out_dir / f"cells_{metric}.csv", an.CELL_HEADER, rows)
                    plotting.plot_cells(rows, fig_dir / f"cells_{metric}.png",
                                        title=f"{'Exact match' if metric == 'em' else 'Token accuracy'} by cell")
            elif kind == "windows":
                curves = []
                for k in range(1, max_k + 1):
                    try:
                        curves.extend(an.crossing_windows(evals, tasks, k, window))
                    except InsufficientData:
                        if k == 1:
                            raise
                        break
                jsonio.write_csv(out_dir / "crossing_windows.csv", an.WINDOW_HEADER,
                                 [r for c in curves for r in c.rows()])
                plotting.plot_windows(curves, fig_dir / "crossing_windows.png")
            elif kind == "prefix":
                jsonio.write_csv(out_dir / "matched_prefix.csv", an.PREFIX_HEADER, an.matched_prefix_control(evals, tasks))
            elif kind == "confounds":
                res = an.confound_curves(evals, tasks, window)
                jsonio.write_csv(out_dir / "confound_cumulative.csv", an.CUMULATIVE_HEADER,
                                 [(m, b, mean, n) for m, c in res for b, mean, n in c.cumulative])
                local = [c.local for _, c in res if c.local is not None]
                if local:
                    jsonio.write_csv(out_dir / "confound_local.csv", an.WINDOW_HEADER, [r for c in local for r in c.rows()])
                plotting.plot_confounds(res, fig_dir / "confound_cumulative.png", q=q_confound)
            elif kind == "ols":
                rows = []
                for include_lr in (False, True):
                    for outcome in ("em", "tok_acc"):
                        for r in an.ols(evals, tasks, include_lr, outcome):
                            rows.extend((("lr" if include_lr else "base"),) + row for row in r.rows())
                jsonio.write_csv(out_dir / "ols.csv", ("spec",) + an.OLS_HEADER, rows)
            elif kind == "regimes":
                rows = an.regime_deltas(evals, tasks)
                jsonio.write_csv(out_dir / "regime_deltas.csv", an.REGIME_HEADER, rows)
                plotting.plot_regimes(rows, fig_dir / "regime_deltas.png")
            elif kind == "answer_rate":
                jsonio.write_csv(out_dir / "answer_rate.csv", an.answer_rate_header(), an.answer_rate_tables(evals, tasks))
                keys = ("model", "sbin")
                jsonio.write_csv(out_dir / "answer_rate_by_sbin.csv", an.answer_rate_header(keys),
                                 an.answer_rate_tables(evals, tasks, keys))
            else:
                raise ValueError(f"unknown analysis kind {kind!r}")
            status[kind] = "ok"
        except (InsufficientData, RankDeficient) as exc:
            if strict and isinstance(exc, RankDeficient):
                raise
            log.warning("analysis %s skipped: %s", kind, exc)
            status[kind] = f"skipped: {exc}"
    return status


def run_preset(cfg, out_dir, jobs=None, endpoint_factory=None):
    """Execute a resolved config end to end into ``out_dir``; returns the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = int(jobs or cfg.get("jobs") or 1)
    seed = int(cfg["seed"])
    g = cf.geometry(cfg)

    # stage 1: backbones
    if cfg.get("reading_order"):
        records = reading_order_records(cfg["reading_order"], g, seed)
        cov = None
    else:
        options = cf.generation(cfg)
        options.bootstrap = bool(cfg["generation"].get("bootstrap", False))
        records, results = generate_grid(cf.grid(cfg), g, options, seed, jobs=jobs)
        cov = coverage_rows(results)
    write_backbones(out / "backbones.jsonl", records)
    if cov is not None:
        write_coverage(out / "coverage.csv", cov)
    records = read_backbones(out / "backbones.jsonl")
    problems = {r.id: verify_record(r, g) for r in records}
    problems = {k: v for k, v in problems.items() if v}
    if problems:
        raise ValidationFailure(f"backbone records failed re-validation: {problems}")
    log.info("stage backbones: %d records", len(records))

    # stage 2: scenes and tasks
    tcfg = cfg["tasks"]
    benchmark = "reading_order" if cfg.get("reading_order") else "main"
    tasks = _build_tasks_parallel(
        records, jobs, variants=int(tcfg["variants"]), confound_ks=tuple(tcfg["confound_ks"]), g=g,
        master_seed=seed, benchmark=benchmark, confound_cfg=cf.confounds(cfg), image_dir=out / "scenes",
        raster=bool(tcfg.get("raster", True)),
    )
    write_tasks(out / "tasks.jsonl", tasks)
    tasks = read_tasks(out / "tasks.jsonl")
    log.info("stage tasks: %d tasks", len(tasks))

    # stage 3: evaluation
    evals_path = out / "evals.jsonl"
    if evals_path.exists():
        evals_path.unlink()
    summaries = []
    for agent in cf.agents(cfg):
        endpoint = None
        if agent.kind == "endpoint":
            if endpoint_factory is None:
                raise ValidationFailure("endpoint agents need an endpoint configuration")
            endpoint = endpoint_factory(agent)
        _, summary = run_eval(tasks, agent, evals_path, endpoint=endpoint, image_root=out / "scenes",
                              max_workers=endpoint.config.max_in_flight if endpoint else 1)
        summaries.append(summary)
        print(summary.line())
    evals = read_evals(evals_path)

    # stage 4: analysis
    acfg = cfg["analysis"]
    q_conf = next((a.q_confound for a in cf.agents(cfg) if a.kind == "noisy" and a.q_confound), None)
    status = run_analyses(evals, tasks, acfg["kinds"], out / "analysis", int(acfg["window"]),
                          int(acfg["max_k"]), q_conf)

    manifest = {
        "name": cfg["name"],
        "config": cfg,
        "config_digest": cf.config_digest(cfg),
        "seed": seed,
        "counts": {"backbones": len(records), "tasks": len(tasks), "evals": len(evals)},
        "summaries": [s.__dict__ for s in summaries],
        "analyses": status,
        "files": directory_digests(out),
    }
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


def verify_manifest(out_dir):
    """Files whose digest differs from the manifest (empty when consistent)."""
    out = Path(out_dir)
    manifest = json.loads((out / MANIFEST).read_text(encoding="utf-8"))
    current = directory_digests(out)
    bad = sorted(set(manifest["files"]) ^ set(current))
    bad += sorted(k for k in manifest["files"] if k in current and current[k] != manifest["files"][k])
    return bad


def cpu_jobs():
    return max(1, os.cpu_count() or 1)
