"""Answer parsing, scoring, synthetic tracers and the resumable eval runner."""

from __future__ import annotations

import hashlib
import logging
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import jsonio
from .errors import EndpointError, JoinFailure
from .renderer import VOCAB, VOCAB_TOKENS, glyph_token

log = logging.getLogger(__name__)

INVALID = "<invalid>"
_VOCAB_LIST = tuple(glyph_token(g) for g in VOCAB)
_FENCE = re.compile(r"^\s*```")
_STRIP = " \t\"'`[](){}.;:*"


@dataclass
class ParsedAnswer:
    tokens: list
    answered: bool
    stripped_fences: bool = False
    invalid_count: int = 0
    raw_items: int = 0


def _normalize(item):
    item = " ".join(item.split())
    item = item.strip(_STRIP)
    return " ".join(item.split())


def parse_answer(text, n_expected=None):
    """Map a completion to vocabulary glyphs.

    Fence lines are removed, as are comma-free lines that are not themselves
    a single glyph (prose around the list). The remainder is lowercased,
    split on commas and whitespace-normalized; items outside the vocabulary
    keep their position as ``INVALID``. Never raises.
    """
    text = "" if text is None else str(text)
    lines = text.splitlines()
    fenced = any(_FENCE.match(ln) for ln in lines)
    kept = []
    for ln in lines:
        if _FENCE.match(ln):
            continue
        if "," not in ln and _normalize(ln.lower()) not in VOCAB_TOKENS:
            continue
        kept.append(ln)
    body = ",".join(kept).lower()
    items = [_normalize(x) for x in body.split(",")]
    items = [x for x in items if x]
    tokens = [x if x in VOCAB_TOKENS else INVALID for x in items]
    invalid = sum(t == INVALID for t in tokens)
    return ParsedAnswer(tokens, invalid < len(tokens), fenced, invalid, len(items))


def format_answer(tokens):
    return ", ".join(tokens)


@dataclass
class EvalRecord:
    task_id: str
    model: str
    em: int
    tok_acc: float
    per_position: str
    answered: bool
    latency_ms: float = 0.0
    error: str | None = None
    n_predicted: int = 0

    @property
    def bits(self):
        return [c == "1" for c in self.per_position]

    def prefix_exact(self, length):
        """True iff the first ``length`` positions are all correct."""
        return all(c == "1" for c in self.per_position[:length])

    def to_json(self):
        return {
            "task_id": self.task_id,
            "model": self.model,
            "em": self.em,
            "tok_acc": self.tok_acc,
            "per_position": self.per_position,
            "answered": self.answered,
            "latency_ms": round(float(self.latency_ms), 3),
            "error": self.error,
            "n_predicted": self.n_predicted,
        }

    @classmethod
    def from_json(cls, d):
        return cls(d["task_id"], d["model"], int(d["em"]), float(d["tok_acc"]), d["per_position"],
                   bool(d["answered"]), float(d.get("latency_ms", 0.0)), d.get("error"), int(d.get("n_predicted", 0)))


def score(parsed, gold, task_id="", model="", latency_ms=0.0, error=None):
    if not gold:
        raise ValueError("gold must be non-empty")
    toks = parsed.tokens
    bits = [i < len(toks) and toks[i] == g for i, g in enumerate(gold)]
    correct = sum(bits)
    em = int(correct == len(gold) and len(toks) == len(gold))
    return EvalRecord(task_id, model, em, correct / len(gold), "".join("1" if b else "0" for b in bits),
                      parsed.answered, latency_ms, error, len(toks))


# -- synthetic agents ------------------------------------------------------------

def _gold(task):
    return task.gold if hasattr(task, "gold") else task["gold"]


def _meta(task):
    return task.meta if hasattr(task, "meta") else task["meta"]


def _task_id(task):
    return task.task_id if hasattr(task, "task_id") else task["task_id"]


def oracle_tracer(task):
    return format_answer(_gold(task))


def _stable_hash(text):
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little")


def noisy_tracer(task, q_cross=0.0, q_confound=0.0, seed=0):
    """Gold sequence with two injected error processes.

    At each crossing decision token the agent takes the wrong branch with
    probability ``q_cross``; after the first such switch it emits the rest of
    the gold sequence reversed. Independently, a position preceded by ``c``
    confound encounters is replaced by a random non-gold glyph with
    probability ``1 - (1 - q_confound) ** c``.
    """
    gold = list(_gold(task))
    meta = _meta(task)
    n = len(gold)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), _stable_hash(_task_id(task))]))
    out = list(gold)
    for d in sorted(meta.get("crossing_tokens", [])):
        if 0 <= d < n and rng.random() < q_cross:
            out[d:] = gold[d:][::-1]
            break
    encounters = np.sort(np.asarray(meta.get("confound_encounters", []), dtype=int))
    u = rng.random(n)
    picks = rng.integers(0, len(_VOCAB_LIST) - 1, n)
    for i in range(n):
        c = int(np.searchsorted(encounters, i, side="left"))
        if c and u[i] < 1.0 - (1.0 - q_confound) ** c:
            others = [t for t in _VOCAB_LIST if t != gold[i]]
            out[i] = others[int(picks[i])]
    return format_answer(out)


@dataclass
class AgentSpec:
    kind: str = "oracle"  # oracle | noisy | endpoint
    q_cross: float = 0.0
    q_confound: float = 0.0
    seed: int = 0
    name: str | None = None

    @property
    def model(self):
        if self.name:
            return self.name
        if self.kind == "noisy":
            return f"noisy(q_cross={self.q_cross:g},q_confound={self.q_confound:g})"
        return self.kind

    def to_dict(self):
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


# -- eval runner -----------------------------------------------------------------

@dataclass
class RunSummary:
    model: str
    n: int
    em: float
    tok_acc: float
    answer_rate: float
    skipped: int = 0

    def line(self):
        return (f"{self.model}: n={self.n} EM={self.em:.4f} TokAcc={self.tok_acc:.4f} "
                f"answer_rate={self.answer_rate:.4f} resumed={self.skipped}")


def summarize(records, model=""):
    if not records:
        return RunSummary(model, 0, 0.0, 0.0, 0.0)
    return RunSummary(
        model or records[0].model,
        len(records),
        float(np.mean([r.em for r in records])),
        float(np.mean([r.tok_acc for r in records])),
        float(np.mean([r.answered for r in records])),
    )


def read_evals(path, tolerate_partial_tail=False):
    keys = ("task_id", "model", "em", "tok_acc", "per_position", "answered")
    return [EvalRecord.from_json(d) for d in jsonio.read_jsonl(path, keys, tolerate_partial_tail)]


def write_evals(path, records):
    jsonio.write_jsonl(path, (r.to_json() for r in sorted(records, key=lambda r: (r.model, r.task_id))))


def _answer(task, agent, endpoint, image_root):
    if agent.kind == "oracle":
        return oracle_tracer(task), 0.0, None
    if agent.kind == "noisy":
        return noisy_tracer(task, agent.q_cross, agent.q_confound, agent.seed), 0.0, None
    if agent.kind == "endpoint":
        resp = endpoint.query(task, image_root)
        return resp.text, resp.latency_ms, resp.error
    raise ValueError(f"unknown agent kind {agent.kind!r}")


def run_eval(tasks, agent, out_path, endpoint=None, image_root=None, max_workers=1, raw_path=None):
    """Score every task once, appending to ``out_path``.

    Existing records for the same model are kept and their task_ids skipped,
    so an interrupted run resumes. At the end the file is rewritten sorted by
    task_id. Returns ``(records, summary)``.
    """
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    model = agent.model if agent.kind != "endpoint" else endpoint.config.model_name
    existing = []
    if out_path.exists():
        existing = read_evals(out_path, tolerate_partial_tail=True)
    # rewrite without any truncated tail before appending
    jsonio.write_jsonl(out_path, (r.to_json() for r in existing))
    done = {r.task_id for r in existing if r.model == model}
    todo = [t for t in tasks if _task_id(t) not in done]
    lock = threading.Lock()

    def work(task):
        try:
            text, latency, err = _answer(task, agent, endpoint, image_root)
        except EndpointError as exc:
            text, latency, err = None, 0.0, f"{exc.kind}: {exc}"
        rec = score(parse_answer(text, len(_gold(task))), _gold(task), _task_id(task), model, latency, err)
        with lock:
            jsonio.append_jsonl(out_path, rec.to_json())
            if raw_path is not None:
                jsonio.append_jsonl(raw_path, {"task_id": _task_id(task), "model": model, "text": text,
                                               "latency_ms": latency, "error": err, "timestamp": time.time()})
        return rec

    if max_workers > 1 and len(todo) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            new = list(pool.map(work, todo))
    else:
        new = [work(t) for t in todo]
    records = existing + new
    write_evals(out_path, records)
    mine = [r for r in records if r.model == model]
    summary = summarize(mine, model)
    summary.skipped = len(done)
    log.info(summary.line())
    return mine, summary


def rescore(raw_rows, tasks):
    """EvalRecords from stored raw responses (``task_id``, ``model``, ``text``)."""
    by_id = {_task_id(t): t for t in tasks}
    out = []
    for row in raw_rows:
        task = by_id.get(row["task_id"])
        if task is None:
            raise JoinFailure([row["task_id"]])
        out.append(score(parse_answer(row.get("text"), len(_gold(task))), _gold(task), row["task_id"],
                         row.get("model", ""), row.get("latency_ms", 0.0), row.get("error")))
    return out
