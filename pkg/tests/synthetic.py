"""Synthetic eval/task pairs with known effects for analysis checks."""

import numpy as np

from pathtrace.harness import EvalRecord


def task(tid, **meta):
    base = {"tbin": 0, "sbin": 0, "n_points": 9, "crossings": 0, "crossing_tokens": [],
            "crossing_first_pass_tokens": [], "confound_count": 0, "confound_encounters": [], "lr_flag": True}
    base.update(meta)
    return {"task_id": tid, "meta": base}


def evalrec(tid, bits, model="m", answered=True):
    bits = "".join("1" if b else "0" for b in bits)
    return EvalRecord(tid, model, int(all(c == "1" for c in bits)), bits.count("1") / len(bits), bits, answered)


def ols_dataset(n=2000, seed=0, sbin_effect=-20.0, lr_effect=5.0, noise_pts=1.0, tbin_effects=(0.0, -3.0, -6.0),
                n_effects=None, model="synthetic"):
    """Token accuracy in points = 80 + effects + N(0, noise); returned as fractions."""
    rng = np.random.default_rng(seed)
    n_effects = n_effects or {9: 0.0, 15: -4.0}
    evals, tasks = [], []
    for k in range(n):
        sbin = int(rng.integers(0, 2))
        tbin = int(rng.integers(0, len(tbin_effects)))
        npts = int(rng.choice(sorted(n_effects)))
        lr = bool(rng.integers(0, 2))
        y = 80 + sbin_effect * sbin + tbin_effects[tbin] + n_effects[npts] + lr_effect * lr + rng.normal(0, noise_pts)
        tid = f"s{k:05d}"
        tasks.append(task(tid, tbin=tbin, sbin=sbin, n_points=npts, lr_flag=lr))
        evals.append(EvalRecord(tid, model, 0, y / 100.0, "0" * npts, True))
    return evals, tasks
