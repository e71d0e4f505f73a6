"""Run configuration: JSON documents merged over defaults.

Precedence, lowest first: ``DEFAULTS``, a config/preset file, explicit
overrides (command-line flags). Sections map onto the typed configs of the
individual stages.
"""

from __future__ import annotations

import copy
import hashlib
import json
from importlib import resources
from pathlib import Path

from . import geometry as geo
from .generator import GenerationOptions, GridSpec, BUILTIN_GRIDS
from .harness import AgentSpec
from .renderer import ConfoundConfig

DEFAULTS = {
    "name": "custom",
    "seed": 0,
    "jobs": 1,
    "geometry": geo.GeometryConfig().to_dict(),
    "grid": "default",
    "generation": {"budget": 20000, "dedup_threshold": 0.05, "max_reps": 25, "mutation_rate": 0.25},
    "tasks": {"variants": 1, "confound_ks": [0, 2, 4], "raster": True},
    "confounds": ConfoundConfig().to_dict(),
    "reading_order": None,
    "agents": [{"kind": "oracle"}],
    "endpoints": [],
    "analysis": {"kinds": ["cells", "answer_rate"], "window": 3, "max_k": 4},
}


def deep_merge(base, override):
    out = copy.deepcopy(base)
    for k, v in (override or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def preset_names():
    return sorted(p.name[:-5] for p in resources.files("pathtrace.presets").iterdir() if p.name.endswith(".json"))


def load_document(name_or_path):
    """A preset by builtin name, or a JSON file path."""
    p = Path(name_or_path)
    if p.suffix == ".json" and p.exists():
        return json.loads(p.read_text(encoding="utf-8"))
    res = resources.files("pathtrace.presets") / f"{name_or_path}.json"
    if res.is_file():
        return json.loads(res.read_text(encoding="utf-8"))
    raise FileNotFoundError(f"no preset or config file named {name_or_path!r}; builtin presets: {preset_names()}")


def resolve(doc=None, overrides=None):
    return deep_merge(deep_merge(DEFAULTS, doc or {}), overrides or {})


def config_digest(cfg):
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode("utf-8")).hexdigest()


def geometry(cfg):
    return geo.GeometryConfig.from_dict(cfg["geometry"])


def grid(cfg):
    g = cfg["grid"]
    if isinstance(g, str):
        if g not in BUILTIN_GRIDS:
            raise ValueError(f"unknown grid {g!r}; builtin grids: {sorted(BUILTIN_GRIDS)}")
        return BUILTIN_GRIDS[g]
    return GridSpec.from_dict(g)


def generation(cfg, bootstrap_sources=()):
    gen = cfg["generation"]
    return GenerationOptions(
        budget=int(gen["budget"]),
        dedup_threshold=float(gen["dedup_threshold"]),
        max_reps=int(gen["max_reps"]),
        mutation_rate=float(gen["mutation_rate"]),
        bootstrap_sources=tuple(bootstrap_sources),
    )


def confounds(cfg):
    return ConfoundConfig.from_dict(cfg["confounds"])


def agents(cfg):
    return [AgentSpec.from_dict(a) for a in cfg["agents"]]
