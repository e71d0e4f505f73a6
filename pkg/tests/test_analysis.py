import math

import numpy as np
import pytest
import statsmodels.api as sm

from pathtrace.analysis import (
    CELL_HEADER,
    PREFIX_HEADER,
    answer_rate_tables,
    cell_table,
    confound_bucket,
    confound_curves,
    crossing_windows,
    design_matrix,
    join,
    matched_prefix_control,
    ols,
    ols_fit,
    regime_deltas,
)
from pathtrace.errors import InsufficientData, JoinFailure, RankDeficient

from synthetic import evalrec, ols_dataset, task


def _oracle_pairs():
    tasks, evals = [], []
    for k in range(6):
        cross = [3] if k % 2 else []
        tasks.append(task(f"t{k}", crossings=len(cross), crossing_tokens=cross, crossing_first_pass_tokens=[1] * len(cross),
                          sbin=len(cross), tbin=k % 3, confound_count=k % 4, confound_encounters=[2] * (k % 4)))
        evals.append(evalrec(f"t{k}", [1] * 9))
    return evals, tasks


class TestJoin:
    def test_orphans(self):
        with pytest.raises(JoinFailure) as exc:
            join([evalrec("zz", [1])], [task("t0")])
        assert "zz" in str(exc.value)

    def test_buckets(self):
        assert [confound_bucket(k) for k in (0, 1, 2, 3, 7)] == ["0", "1-2", "1-2", "3+", "3+"]
        with pytest.raises(ValueError):
            confound_bucket(-1)


class TestCells:
    def test_oracle_all_one(self):
        rows = cell_table(*_oracle_pairs())
        present = [r for r in rows if r[-1] == "present"]
        assert present and all(r[6] == 1.0 for r in present)
        assert len(CELL_HEADER) == len(rows[0])

    def test_absent_cells(self):
        evals, tasks = _oracle_pairs()
        rows = cell_table(evals, tasks, levels=([0, 1, 2, 3], [0, 1], [9], ["0", "1-2", "3+"]))
        absent = [r for r in rows if r[-1] == "absent"]
        assert absent and all(r[5] == 0 and math.isnan(r[6]) for r in absent)

    def test_unweighted_mean(self):
        tasks = [task("a"), task("b"), task("c")]
        evals = [evalrec("a", [1, 1]), evalrec("b", [1, 0]), evalrec("c", [0, 0])]
        (row,) = [r for r in cell_table(evals, tasks, metric="tok_acc") if r[-1] == "present"]
        assert row[6] == pytest.approx(0.5) and row[5] == 3

    def test_unknown_metric(self):
        with pytest.raises(ValueError):
            cell_table(*_oracle_pairs(), metric="f1")


class TestWindows:
    def test_oracle_flat(self):
        (curve,) = crossing_windows(*_oracle_pairs(), k=1, w=2)
        assert curve.offsets == [-2, -1, 0, 1, 2]
        assert curve.mean == [1.0] * 5 and curve.control_mean == [1.0] * 5

    def test_drop_at_offset_zero(self):
        tasks = [task("x", crossings=1, crossing_tokens=[4], sbin=1), task("c")]
        evals = [evalrec("x", [1, 1, 1, 1, 0, 0, 0, 0, 0]), evalrec("c", [1] * 9)]
        (curve,) = crossing_windows(evals, tasks, w=1)
        assert curve.mean == [1.0, 0.0, 0.0]
        assert curve.control_mean == [1.0, 1.0, 1.0]

    def test_out_of_range_skipped(self):
        tasks = [task("x", crossings=1, crossing_tokens=[8], sbin=1), task("c")]
        evals = [evalrec("x", [1] * 9), evalrec("c", [1] * 9)]
        (curve,) = crossing_windows(evals, tasks, w=2)
        assert curve.count == [1, 1, 1, 0, 0]
        assert math.isnan(curve.mean[-1])

    def test_first_pass_anchor(self):
        (curve,) = crossing_windows(*_oracle_pairs(), anchor="first_pass", w=1)
        assert curve.anchor == "first_pass"

    def test_insufficient(self):
        evals, tasks = _oracle_pairs()
        with pytest.raises(InsufficientData):
            crossing_windows(evals, tasks, k=2)
        only_cross = [(e, t) for e, t in zip(evals, tasks) if t["meta"]["crossings"]]
        with pytest.raises(InsufficientData):
            crossing_windows([e for e, _ in only_cross], [t for _, t in only_cross])


class TestPrefix:
    def test_oracle(self):
        (row,) = matched_prefix_control(*_oracle_pairs())
        assert row[1:4] == (100.0, 100.0, 0.0)
        assert row[4] == 3.0
        assert PREFIX_HEADER == ("Model", "Intersecting prefix exact", "Matched no cross prefix exact",
                                 "Delta vs matched no cross", "Mean pre len")

    def test_matched_lengths(self):
        # control fails at position 2 so it is exact on length 2 but not length 4
        tasks = [task("a", crossings=1, crossing_tokens=[2], sbin=1), task("b", crossings=1, crossing_tokens=[4], sbin=1),
                 task("c")]
        evals = [evalrec("a", [1] * 9), evalrec("b", [1] * 9), evalrec("c", [1, 1, 0] + [1] * 6)]
        (row,) = matched_prefix_control(evals, tasks)
        assert row[1] == 100.0 and row[2] == 50.0 and row[3] == 50.0 and row[4] == 3.0


class TestConfounds:
    def test_cumulative(self):
        tasks = [task("a", confound_count=2, confound_encounters=[1, 3]), task("b")]
        evals = [evalrec("a", [1, 1, 0, 1, 0]), evalrec("b", [1] * 5)]
        (model, cc), = confound_curves(evals, tasks, w=1)
        cum = {b: (m, c) for b, m, c in cc.cumulative}
        # positions 0,1 -> 0 prior encounters; 2,3 -> 1; 4 -> 2; plus all of b at 0
        assert cum[0] == (1.0, 7) and cum[1] == (0.5, 2) and cum[2] == (0.0, 1)
        assert cc.local.offsets == [-1, 0, 1]


class TestOLS:
    def test_matches_statsmodels(self):
        evals, tasks = ols_dataset(400, seed=3, noise_pts=5)
        metas = [t["meta"] for t in tasks]
        X, cols, _ = design_matrix(metas, include_lr=True)
        y = np.array([100 * e.tok_acc for e in evals])
        coef, se = ols_fit(X, y, cols)
        ref = sm.OLS(y, X).fit()
        np.testing.assert_allclose(coef, ref.params, atol=1e-8)
        np.testing.assert_allclose(se, ref.bse, atol=1e-8)

    def test_recovers_effects(self):
        (res,) = ols(*ols_dataset(2000, seed=1, noise_pts=0.5), include_lr=True)
        d = res.as_dict()
        assert d["sbin=1"] == pytest.approx(-20, abs=0.5)
        assert d["LR"] == pytest.approx(5, abs=0.5)
        assert res.baselines == {"sbin": 0, "tbin": 0, "n_points": 9, "lr": "RL"}

    def test_constant_outcome(self):
        evals, tasks = ols_dataset(200, seed=2, sbin_effect=0, lr_effect=0, noise_pts=0,
                                   tbin_effects=(0, 0, 0), n_effects={9: 0, 15: 0})
        (res,) = ols(evals, tasks, include_lr=True)
        np.testing.assert_allclose(res.coef, [80] + [0] * (len(res.coef) - 1), atol=1e-9)
        np.testing.assert_allclose(res.se, 0, atol=1e-9)

    def test_single_level(self):
        evals, tasks = ols_dataset(50, seed=0)
        for t in tasks:
            t["meta"]["n_points"] = 9
        with pytest.raises(RankDeficient) as exc:
            ols(evals, tasks)
        assert "n_points" in str(exc.value)

    def test_constant_lr(self):
        evals, tasks = ols_dataset(50, seed=0)
        for t in tasks:
            t["meta"]["lr_flag"] = True
        with pytest.raises(RankDeficient):
            ols(evals, tasks, include_lr=True)

    def test_collinear(self):
        X = np.c_[np.ones(10), np.arange(10), 2 * np.arange(10)]
        with pytest.raises(RankDeficient):
            ols_fit(X, np.arange(10.0), ["a", "b", "c"])

    def test_tie_rows_dropped_with_lr(self):
        evals, tasks = ols_dataset(300, seed=4)
        tasks[0]["meta"]["lr_flag"] = None
        (res,) = ols(evals, tasks, include_lr=True)
        assert res.n == 299


class TestRegimes:
    def _data(self, bump):
        tasks, evals = [], []
        for r in ("ltr_tb", "rtl_tb", "ttb_rl", "ttb_lr"):
            for lanes in (1, 2):
                for n in (4, 8):
                    tid = f"{r}-{lanes}-{n}"
                    tasks.append(task(tid, regime=r, lane_count=lanes, n_points=n))
                    bits = [1] * n
                    if r != "ltr_tb" and bump:
                        bits[-1] = 0
                    evals.append(evalrec(tid, bits))
        return evals, tasks

    def test_zero_for_oracle(self):
        rows = regime_deltas(*self._data(False))
        assert all(r[3] == 0 for r in rows)

    def test_sum_zero_and_sign(self):
        rows = regime_deltas(*self._data(True))
        d = {r[1]: r[3] for r in rows}
        assert sum(d.values()) == pytest.approx(0, abs=1e-9)
        assert d["ltr_tb"] > 0 and all(d[r] < 0 for r in ("rtl_tb", "ttb_rl", "ttb_lr"))
        # ltr is 1.0; others average (3/4 + 7/8)/2 = 0.8125 -> center 0.859375
        assert d["ltr_tb"] == pytest.approx(100 * (1 - 0.859375))

    def test_ten_point_bump(self):
        tasks, evals = [], []
        for r in ("ltr_tb", "rtl_tb", "ttb_rl", "ttb_lr"):
            tid = r
            tasks.append(task(tid, regime=r, lane_count=1, n_points=10))
            evals.append(evalrec(tid, [1] * (9 if r == "ltr_tb" else 8) + [0] * (1 if r == "ltr_tb" else 2)))
        d = {r[1]: r[3] for r in regime_deltas(evals, tasks)}
        assert d["ltr_tb"] == pytest.approx(7.5) and d["rtl_tb"] == pytest.approx(-2.5)

    def test_missing_cell(self):
        evals, tasks = self._data(False)
        with pytest.raises(InsufficientData):
            regime_deltas(evals[1:], tasks[1:])

    def test_single_regime(self):
        evals, tasks = self._data(False)
        with pytest.raises(InsufficientData):
            regime_deltas(evals[:4], tasks[:4])


class TestAnswerRate:
    def test_identity(self):
        tasks = [task(f"t{k}", sbin=k % 2) for k in range(8)]
        evals = [evalrec(f"t{k}", [1, k % 3 != 0], answered=k != 5) for k in range(8)]
        evals[5] = evalrec("t5", [0, 0], answered=False)
        for keys in (("model",), ("model", "sbin")):
            for row in answer_rate_tables(evals, tasks, keys):
                n, rate, overall, cond = row[-4:]
                assert abs(overall - rate * cond) <= 1e-12

    def test_none_answered(self):
        evals = [evalrec("a", [0], answered=False)]
        (row,) = answer_rate_tables(evals, [task("a")])
        assert row[2] == 0 and row[3] == 0 and math.isnan(row[4])
