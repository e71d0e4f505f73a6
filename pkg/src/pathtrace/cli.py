"""Command-line entry point: ``pathtrace <subcommand> [flags]``.

Exit codes: 0 success, 2 usage or configuration error, 3 validation or
stage failure, 4 endpoint failure, 5 I/O failure. Failures also print one
JSON line on stderr: ``{"error": ..., "stage": ..., "message": ...}``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import analysis as an
from . import config as cf
from . import jsonio
from .endpoint import Endpoint, EndpointConfig
from .errors import (
    EndpointError,
    MalformedLine,
    PathTraceError,
    SchemaMismatch,
    ValidationFailure,
)
from .generator import (
    coverage_rows,
    dedup,
    generate_grid,
    read_backbones,
    verify_record,
    write_backbones,
    write_coverage,
)
from .harness import AgentSpec, read_evals, rescore, run_eval, write_evals
from .renderer import SceneSpec, assign_glyphs, place_confounds, render_svg, ConfoundSet
from .raster import rasterize
from .taskset import REGIMES, build_tasks, read_tasks, regime_violations, build_reading_order, write_tasks
from .tracersuite import cpu_jobs, reading_order_records, run_analyses, run_preset, verify_manifest

log = logging.getLogger("pathtrace")

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_ENDPOINT, EXIT_IO = 0, 2, 3, 4, 5
ANALYSIS_KINDS = ("cells", "windows", "prefix", "confounds", "ols", "regimes", "answer_rate")


def _ints(text):
    return [int(x) for x in text.split(",") if x.strip()]


def _config(args, overrides=None):
    doc = cf.load_document(args.config) if getattr(args, "config", None) else None
    return cf.resolve(doc, overrides)


def _jobs(args):
    return args.jobs if args.jobs is not None else cpu_jobs()


# -- subcommands -------------------------------------------------------------------

def cmd_gen_backbones(args):
    over = {}
    if args.grid:
        over["grid"] = json.loads(Path(args.grid).read_text()) if args.grid.endswith(".json") else args.grid
    if args.seed is not None:
        over["seed"] = args.seed
    gen = {}
    if args.budget is not None:
        gen["budget"] = args.budget
    if args.bootstrap:
        gen["bootstrap"] = True
    if gen:
        over["generation"] = gen
    cfg = _config(args, over)
    grid = cf.grid(cfg)
    if args.quota is not None:
        grid = type(grid)(grid.tbins, grid.sbins, grid.n_points, args.quota, grid.skip, grid.cells)
    options = cf.generation(cfg)
    options.bootstrap = bool(cfg["generation"].get("bootstrap", False))
    records, results = generate_grid(grid, cf.geometry(cfg), options, int(cfg["seed"]), jobs=_jobs(args))
    write_backbones(args.out, records)
    cov = args.coverage or str(Path(args.out).with_suffix("")) + ".coverage.csv"
    write_coverage(cov, coverage_rows(results))
    counts = {}
    for row in coverage_rows(results):
        counts[row[-1]] = counts.get(row[-1], 0) + 1
    print(f"{len(records)} backbones written to {args.out}; cells: {counts}")
    return EXIT_OK


def cmd_dedup(args):
    records = read_backbones(args.input)
    cells = {}
    for r in records:
        cells.setdefault((r.tbin, r.sbin, r.n_points), []).append(r)
    kept = []
    for key in sorted(cells):
        kept.extend(dedup(cells[key], args.threshold, args.max_reps))
    kept.sort(key=lambda r: r.id)
    write_backbones(args.out, kept)
    print(f"kept {len(kept)} of {len(records)} backbones")
    return EXIT_OK


def cmd_render(args):
    cfg = _config(args)
    g = cf.geometry(cfg)
    spec = SceneSpec.from_geometry(g)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for rec in read_backbones(args.backbones):
        seed = args.seed * 1_000_003 + rec.id
        glyphs = assign_glyphs(rec.n_points, seed)
        confounds = place_confounds(rec, args.confounds, g, seed, cf.confounds(cfg)) if args.confounds else ConfoundSet()
        svg = render_svg(rec, glyphs, confounds, spec)
        stem = f"scene-{rec.id:06d}"
        (out / f"{stem}.svg").write_text(svg, encoding="utf-8")
        if not args.no_raster:
            rasterize(svg, out / f"{stem}.png")
        rows.append({"id": rec.id, "svg": f"{stem}.svg", "image": None if args.no_raster else f"{stem}.png",
                     "glyphs": [list(x) for x in glyphs], "confounds": confounds.to_json(), "seed": seed})
    jsonio.write_jsonl(out / "scenes.jsonl", rows)
    print(f"{len(rows)} scenes written to {out}")
    return EXIT_OK


def cmd_build_tasks(args):
    cfg = _config(args)
    records = read_backbones(args.backbones)
    scenes = Path(args.scenes_dir) if args.scenes_dir else Path(args.out).parent / "scenes"
    tasks = build_tasks(records, args.variants, tuple(_ints(args.confound_ks)), cf.geometry(cfg), args.seed,
                        args.benchmark, cf.confounds(cfg), scenes, raster=not args.no_raster)
    write_tasks(args.out, tasks)
    print(f"{len(tasks)} tasks written to {args.out} (scenes in {scenes})")
    return EXIT_OK


def cmd_gen_reading_order(args):
    cfg = _config(args)
    spec = {"regimes": args.regimes.split(","), "lanes": _ints(args.lanes), "n_points": _ints(args.n_points),
            "layouts": args.layouts}
    unknown = [r for r in spec["regimes"] if r not in REGIMES]
    if unknown:
        raise ValueError(f"unknown regimes {unknown}; choose from {list(REGIMES)}")
    records = reading_order_records(spec, cf.geometry(cfg), args.seed)
    write_backbones(args.out, records)
    print(f"{len(records)} reading-order backbones written to {args.out}")
    return EXIT_OK


def _endpoint_from(args, cfg):
    eps = [EndpointConfig.from_dict(e) for e in cfg.get("endpoints", [])]
    if args.base_url:
        eps.insert(0, EndpointConfig(args.base_url, args.model_name or "model", args.token_env))
    if args.endpoint:
        eps = [e for e in eps if e.model_name == args.endpoint]
    if not eps:
        raise ValueError("no endpoint configured: pass --base-url or list one under 'endpoints' in --config")
    return Endpoint(eps[0])


def cmd_eval(args):
    cfg = _config(args)
    tasks = read_tasks(args.tasks)
    if args.limit:
        tasks = tasks[: args.limit]
    agent = AgentSpec(args.agent, args.q_cross, args.q_confound, args.agent_seed, args.model_label)
    endpoint = _endpoint_from(args, cfg) if args.agent == "endpoint" else None
    image_root = args.image_root or str(Path(args.tasks).parent / "scenes")
    try:
        records, summary = run_eval(tasks, agent, args.out, endpoint, image_root,
                                    max_workers=endpoint.config.max_in_flight if endpoint else 1,
                                    raw_path=args.raw_out)
    finally:
        if endpoint:
            endpoint.close()
    print(summary.line())
    if endpoint is not None and records and all(r.error for r in records):
        raise EndpointError(f"every request failed; first error: {records[0].error}")
    return EXIT_OK


def cmd_score(args):
    tasks = read_tasks(args.tasks)
    raw = jsonio.read_jsonl(args.responses, required=("task_id", "text"))
    records = rescore(raw, tasks)
    write_evals(args.out, records)
    print(f"{len(records)} responses scored into {args.out}")
    return EXIT_OK


def cmd_analyze(args):
    tasks = read_tasks(args.tasks)
    evals = read_evals(args.evals)
    kinds = list(ANALYSIS_KINDS) if args.kind == "all" else [args.kind]
    status = run_analyses(evals, tasks, kinds, args.out_dir, args.window, args.max_k,
                          strict=args.kind != "all")
    for k, v in status.items():
        print(f"{k}: {v}")
    if args.kind != "all" and status[args.kind] != "ok":
        raise an.InsufficientData(status[args.kind])
    return EXIT_OK


def cmd_run_preset(args):
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    cfg = cf.resolve(cf.load_document(args.preset), over)

    def factory(agent):
        e = next((e for e in cfg["endpoints"] if e["model_name"] == agent.name), None)
        if e is None:
            raise ValueError(f"agent {agent.name!r} has no matching entry under 'endpoints'")
        return Endpoint(EndpointConfig.from_dict(e))

    manifest = run_preset(cfg, args.out, jobs=_jobs(args), endpoint_factory=factory)
    print(f"preset {manifest['name']} complete: {manifest['counts']} -> {args.out}")
    return EXIT_OK


def _validate_backbones(path, g):
    failures = []
    for rec in read_backbones(path):
        problems = verify_record(rec, g)
        if rec.regime is not None:
            v, lanes = build_reading_order(rec.regime, rec.lane_count, rec.n_points, g, rec.seed)
            if (v.shape != rec.vertices.shape) or abs(v - rec.vertices).max() > 1e-9:
                problems.append("reading-order layout does not match its regime parameters")
            problems += regime_violations(rec.vertices, lanes, rec.regime)
        if problems:
            failures.append({"id": rec.id, "problems": problems})
    return failures


def _validate_tasks(path):
    from .taskset import build_prompt, crossing_decision_tokens

    failures = []
    for t in read_tasks(path):
        problems = []
        if t.n != len(t.gold) or t.gold[0] != "red square" or len(set(t.gold)) != len(t.gold):
            problems.append("gold sequence malformed")
        if (t.prompt_system, t.prompt_user) != build_prompt(t.n, t.start_token):
            problems.append("prompt differs from template")
        if t.vertices and crossing_decision_tokens(t.vertices) != t.meta["crossing_tokens"]:
            problems.append("crossing tokens inconsistent with vertices")
        if problems:
            failures.append({"id": t.task_id, "problems": problems})
    return failures


def cmd_validate(args):
    cfg = _config(args)
    path = Path(args.path)
    if path.is_dir():
        bad = verify_manifest(path)
        failures = [{"id": f, "problems": ["digest mismatch"]} for f in bad]
    else:
        first = jsonio.read_jsonl(path)[:1]
        if first and "schema_version" in first[0]:
            failures = _validate_tasks(path)
        else:
            failures = _validate_backbones(path, cf.geometry(cfg))
    if failures:
        for f in failures:
            print(json.dumps(f))
        raise ValidationFailure(f"{len(failures)} invalid entries in {path}: ids {[f['id'] for f in failures]}")
    print(f"{path}: valid")
    return EXIT_OK


# -- parser ------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="pathtrace", description=__doc__.split("\n")[0])
    p.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"],
                   help="logging verbosity (progress is logged at INFO)")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        sp = sub.add_parser(name, help=help_text, description=help_text)
        sp.add_argument("--config", help="JSON config or builtin preset name merged over the defaults")
        sp.set_defaults(func=func)
        return sp

    sp = add("gen-backbones", cmd_gen_backbones, "generate accepted backbones for a grid of cells")
    sp.add_argument("--grid", help="builtin grid name (default, small) or a grid JSON file")
    sp.add_argument("--seed", type=int, help="master seed")
    sp.add_argument("--quota", type=int, help="override the per-cell quota")
    sp.add_argument("--budget", type=int, help="attempt budget per cell")
    sp.add_argument("--bootstrap", action="store_true", help="grow larger point counts from smaller ones")
    sp.add_argument("--jobs", type=int, help="worker processes (default: all CPUs)")
    sp.add_argument("--out", required=True, help="backbone JSONL output")
    sp.add_argument("--coverage", help="coverage CSV output (default: <out>.coverage.csv)")

    sp = add("dedup", cmd_dedup, "drop near-duplicate backbones within each cell")
    sp.add_argument("--in", dest="input", required=True, help="backbone JSONL input")
    sp.add_argument("--out", required=True, help="backbone JSONL output")
    sp.add_argument("--threshold", type=float, default=0.05, help="signature distance threshold")
    sp.add_argument("--max-reps", type=int, default=25, help="maximum kept per cell")

    sp = add("render", cmd_render, "render backbones to SVG/PNG scenes with a scene manifest")
    sp.add_argument("--backbones", required=True, help="backbone JSONL input")
    sp.add_argument("--out-dir", required=True, help="scene directory")
    sp.add_argument("--seed", type=int, default=0, help="glyph/confound seed")
    sp.add_argument("--confounds", type=int, default=0, help="confounding segments per scene")
    sp.add_argument("--no-raster", action="store_true", help="write SVG only")

    sp = add("build-tasks", cmd_build_tasks, "build task instances (scenes, gold, prompts, metadata)")
    sp.add_argument("--backbones", required=True, help="backbone JSONL input")
    sp.add_argument("--out", required=True, help="task JSONL output")
    sp.add_argument("--scenes-dir", help="scene directory (default: scenes/ next to --out)")
    sp.add_argument("--variants", type=int, default=1, help="tasks per backbone")
    sp.add_argument("--confound-ks", default="0", help="comma list of confound counts cycled over variants")
    sp.add_argument("--seed", type=int, default=0, help="master seed for glyphs and confounds")
    sp.add_argument("--benchmark", default="main", choices=["main", "reading_order"], help="benchmark label")
    sp.add_argument("--no-raster", action="store_true", help="write SVG only")

    sp = add("gen-reading-order", cmd_gen_reading_order, "generate reading-order layouts as backbones")
    sp.add_argument("--out", required=True, help="backbone JSONL output")
    sp.add_argument("--seed", type=int, default=0, help="layout seed")
    sp.add_argument("--regimes", default=",".join(REGIMES), help="comma list of regimes")
    sp.add_argument("--lanes", default="1,2,3", help="comma list of lane counts")
    sp.add_argument("--n-points", default="9,15", help="comma list of point counts")
    sp.add_argument("--layouts", type=int, default=1, help="jittered layouts per combination")

    sp = add("eval", cmd_eval, "evaluate an agent on a task file (resumable)")
    sp.add_argument("--tasks", required=True, help="task JSONL input")
    sp.add_argument("--out", required=True, help="eval JSONL output (appended, then compacted)")
    sp.add_argument("--agent", default="oracle", choices=["oracle", "noisy", "endpoint"], help="agent kind")
    sp.add_argument("--q-cross", type=float, default=0.0, help="noisy agent: wrong-branch probability")
    sp.add_argument("--q-confound", type=float, default=0.0, help="noisy agent: per-confound corruption")
    sp.add_argument("--agent-seed", type=int, default=0, help="noisy agent seed")
    sp.add_argument("--model-label", help="model name recorded for synthetic agents")
    sp.add_argument("--endpoint", help="model_name of the configured endpoint to use")
    sp.add_argument("--base-url", help="chat endpoint base URL (…/v1)")
    sp.add_argument("--model-name", help="model requested from --base-url")
    sp.add_argument("--token-env", help="environment variable holding the API token")
    sp.add_argument("--image-root", help="directory holding scene images (default: scenes/ next to tasks)")
    sp.add_argument("--raw-out", help="also append raw responses to this JSONL")
    sp.add_argument("--limit", type=int, help="evaluate only the first N tasks")

    sp = add("score", cmd_score, "score stored raw responses against tasks")
    sp.add_argument("--tasks", required=True, help="task JSONL input")
    sp.add_argument("--responses", required=True, help="raw response JSONL (task_id, model, text)")
    sp.add_argument("--out", required=True, help="eval JSONL output")

    sp = add("analyze", cmd_analyze, "write analysis CSV tables and PNG figures")
    sp.add_argument("--tasks", required=True, help="task JSONL input")
    sp.add_argument("--evals", required=True, help="eval JSONL input")
    sp.add_argument("--kind", default="all", choices=ANALYSIS_KINDS + ("all",), help="analysis to run")
    sp.add_argument("--out-dir", default="analysis", help="output directory")
    sp.add_argument("--window", type=int, default=3, help="window half-width in tokens")
    sp.add_argument("--max-k", type=int, default=4, help="highest crossing index for windows")

    sp = add("run-preset", cmd_run_preset, "run a preset end to end into a directory")
    sp.add_argument("preset", help="builtin preset name or preset JSON file")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--seed", type=int, help="override the preset master seed")
    sp.add_argument("--jobs", type=int, help="worker processes (default: all CPUs)")

    sp = add("validate", cmd_validate, "re-check a backbone/task file or a run directory")
    sp.add_argument("path", help="backbone JSONL, task JSONL, or run directory with a manifest")
    return p


def _exit_code(exc):
    if isinstance(exc, EndpointError):
        return EXIT_ENDPOINT
    if isinstance(exc, (OSError, MalformedLine, SchemaMismatch)):
        return EXIT_IO
    if isinstance(exc, (ValueError, KeyError, TypeError)) and not isinstance(exc, PathTraceError):
        return EXIT_USAGE
    return EXIT_VALIDATION


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (PathTraceError, OSError, ValueError, KeyError, TypeError) as exc:
        stage = getattr(exc, "stage", "io" if isinstance(exc, OSError) else "config")
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "stage": stage, "message": str(exc)}) + "\n")
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
