import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pathtrace import geometry as geo
from pathtrace.errors import FamilyInapplicable, GrowthInfeasible, MutationInfeasible
from pathtrace.families import FAMILIES, CellTarget, max_crossings
from pathtrace.generator import (
    BackboneRecord,
    GenerationOptions,
    GridSpec,
    accept,
    attempt_seed,
    bootstrap_grow,
    coverage_from_records,
    coverage_rows,
    dedup,
    evaluate,
    generate_cell,
    generate_grid,
    mutate,
    propose,
    read_backbones,
    signature,
    signature_distance,
    verify_record,
    write_backbones,
)

from oracles import brute_force_crossings, crossing_bin, independent_recheck, sinuosity, tortuosity_bin

G = geo.GeometryConfig()


def _record(vertices, rid=0, cell=(0, 0)):
    v = np.asarray(vertices, dtype=float)
    return BackboneRecord(rid, "proposal_walk", v, geo.tortuosity(v), geo.crossing_count(v),
                          cell[0], cell[1], len(v), 0)


def _accepted(cell, start=0, family="proposal_walk"):
    for seed in range(start, start + 500):
        try:
            cand = propose(family, cell, seed)
        except Exception:
            continue
        rec = accept(cand, cell, family=family, seed=seed)
        if rec is not None:
            return rec
    raise AssertionError(f"no acceptance for {cell}")


@pytest.fixture(scope="module")
def small_corpus():
    grid = GridSpec(tbins=(1, 2, 3), sbins=(0, 1), n_points=(9,), quota=4)
    return generate_grid(grid, options=GenerationOptions(budget=600), master_seed=11)


class TestSeedSchedule:
    def test_stable(self):
        assert attempt_seed(1, 2, 3, 9, 0) == attempt_seed(1, 2, 3, 9, 0)

    def test_sensitive_to_every_component(self):
        base = attempt_seed(1, 2, 3, 9, 0)
        others = {attempt_seed(2, 2, 3, 9, 0), attempt_seed(1, 3, 3, 9, 0), attempt_seed(1, 2, 4, 9, 0),
                  attempt_seed(1, 2, 3, 11, 0), attempt_seed(1, 2, 3, 9, 1)}
        assert base not in others and len(others) == 5

    def test_fits_64_bits(self):
        assert 0 <= attempt_seed(0, 0, 0, 9, 123) < 2**64


class TestPropose:
    def test_bowtie_one_crossing(self):
        p = propose("bowtie", CellTarget(1, 1, 5), 7)
        assert len(p) == 5
        assert len(brute_force_crossings(p)) == 1

    def test_walk_low_cell(self):
        cell = CellTarget(0, 0, 9)
        rec = _accepted(cell, start=1)
        assert rec.crossings == 0
        assert brute_force_crossings(rec.vertices) == []
        assert rec.tortuosity < 1.3

    def test_split_star_too_few_vertices(self):
        with pytest.raises(FamilyInapplicable):
            propose("split_star", CellTarget(3, 5, 4), 0)

    def test_bootstrap_not_proposable(self):
        with pytest.raises(FamilyInapplicable):
            propose("bootstrap", CellTarget(2, 1, 9), 0)

    @pytest.mark.parametrize("family", ["bowtie", "rail_weave", "split_star", "braid", "knot_template", "proposal_walk"])
    def test_deterministic(self, family):
        cell = next(CellTarget(t, s, 13) for s in range(1, 6) for t in range(3, 6)
                    if FAMILIES[family].reachable(CellTarget(t, s, 13), geo.DEFAULT_BINS))
        outs = []
        for _ in range(2):
            for seed in range(50):
                try:
                    outs.append(propose(family, cell, seed))
                    break
                except Exception:
                    continue
        assert len(outs) == 2
        np.testing.assert_array_equal(outs[0], outs[1])
        assert len(outs[0]) == 13

    def test_crossing_bound(self):
        assert max_crossings(4) == 1
        assert max_crossings(5) == 3


class TestMutate:
    def test_safe_split_long_segment(self):
        p = np.array([[0.0, 0.0], [100.0, 0.0]])
        q = mutate(p, "safe_split", 3)
        assert len(q) == 3
        assert 0 < q[1, 0] < 100 and q[1, 1] == 0.0
        assert min(geo.segment_lengths(q)) >= G.spacing_S

    def test_safe_split_keeps_original_points(self):
        p = np.array([[0.0, 0.0], [100.0, 0.0], [100.0, 120.0]])
        q = mutate(p, "safe_split", 5)
        assert len(q) == 4
        kept = [row for row in q.tolist() if row in p.tolist()]
        assert kept == p.tolist()

    def test_safe_split_infeasible(self):
        with pytest.raises(MutationInfeasible):
            mutate(np.array([[0.0, 0.0], [50.0, 0.0]]), "safe_split", 0)

    def test_anisotropic_scale_straight_line(self):
        p = np.array([[0.0, 0.0], [50.0, 0.0], [100.0, 0.0]])
        q = mutate(p, "anisotropic_scale", 0, factors=(2, 1))
        assert geo.tortuosity(q) == pytest.approx(1.0, abs=1e-12)
        assert not np.array_equal(p, q)

    def test_isotropic_is_infeasible(self):
        with pytest.raises(MutationInfeasible):
            mutate(np.array([[0.0, 0.0], [1.0, 1.0]]), "anisotropic_scale", 0, factors=(1, 1))

    @pytest.mark.parametrize("kind", ["anisotropic_scale", "local_warp", "extend_endpoint", "permute_crossings"])
    def test_changes_and_deterministic(self, kind):
        p = np.array([[0, 0], [100, 10], [200, 0], [300, 40], [400, 0], [500, 30]], dtype=float)
        a = mutate(p, kind, 9)
        b = mutate(p, kind, 9)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, p)
        assert len(a) == len(p)

    def test_extend_endpoint_needs_refit(self):
        rec = _accepted(CellTarget(1, 0, 9))
        grown = mutate(rec.vertices, "extend_endpoint", 0)
        refit = geo.fit_to_view(grown, G)
        assert not np.allclose(refit, grown)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            mutate(np.zeros((2, 2)) + [[0, 0], [1, 1]], "shuffle", 0)


class TestAccept:
    def test_straight_line(self):
        rec = accept(np.array([[0.0, 0.0], [300.0, 0.0]]), CellTarget(0, 0, 2))
        assert rec is not None
        assert rec.tortuosity == pytest.approx(1.0)
        assert rec.vertices[:, 0].min() == pytest.approx(G.margin_px)

    def test_bowtie_rejected_for_regime_zero(self):
        p = propose("bowtie", CellTarget(1, 1, 5), 7)
        assert accept(p, CellTarget(1, 0, 5)) is None

    def test_spacing_violation_rejected(self):
        p = np.array([[0, 0], [300, 0], [305, 2], [600, 0]], dtype=float)
        _, _, reason = evaluate(p, CellTarget(0, 0, 4))
        assert reason == "constraints"
        assert accept(p, CellTarget(0, 0, 4)) is None

    def test_point_count_mismatch(self):
        assert accept(np.array([[0.0, 0.0], [300.0, 0.0]]), CellTarget(0, 0, 3)) is None


class TestBootstrap:
    def test_grow_preserves_crossings(self):
        src = _accepted(CellTarget(3, 1, 9), family="rail_weave")
        grown = bootstrap_grow(src, 11, seed=4)
        assert len(grown) == 11
        assert len(brute_force_crossings(grown)) == src.crossings

    def test_deterministic(self):
        src = _accepted(CellTarget(2, 0, 9))
        np.testing.assert_array_equal(bootstrap_grow(src, 10, seed=1), bootstrap_grow(src, 10, seed=1))

    def test_precondition(self):
        src = _accepted(CellTarget(2, 0, 9))
        with pytest.raises(ValueError):
            bootstrap_grow(src, 9)

    def test_no_splittable_segment(self):
        # a dense zigzag: once fitted every segment is shorter than 2 S
        xs = np.arange(40, dtype=float)
        src = _record(np.c_[xs, (xs % 2) * 0.8], cell=(1, 0))
        with pytest.raises(GrowthInfeasible):
            bootstrap_grow(src, 45)


class TestSignature:
    def test_similarity_invariance(self, rng):
        p = rng.uniform(0, 100, (9, 2))
        q = p * 2.0 + [37.0, -5.0]
        assert signature_distance(signature(p), signature(q)) <= 1e-9

    def test_reversal(self, rng):
        p = rng.uniform(0, 100, (9, 2))
        assert signature_distance(signature(p), signature(p[::-1])) <= 1e-9

    def test_shape(self, rng):
        s = signature(rng.uniform(0, 100, (5, 2)))
        assert s.shape == (64, 2)
        assert s.min() == pytest.approx(0.0) and s.max() == pytest.approx(1.0)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000))
    def test_symmetric(self, seed):
        r = np.random.default_rng(seed)
        a, b = signature(r.uniform(0, 1, (6, 2))), signature(r.uniform(0, 1, (7, 2)))
        assert signature_distance(a, b) == pytest.approx(signature_distance(b, a))
        assert signature_distance(a, a) == 0.0

    def test_distinct_cells_far_apart(self, small_corpus):
        records, _ = small_corpus
        by_cell = {}
        for r in records:
            by_cell.setdefault((r.tbin, r.sbin), []).append(r)
        cells = sorted(by_cell)
        dists = [signature_distance(signature(by_cell[a][0].vertices), signature(by_cell[b][0].vertices))
                 for i, a in enumerate(cells) for b in cells[i + 1:]]
        assert np.mean(dists) > 0.05


class TestDedup:
    def test_injected_copy(self):
        base = _accepted(CellTarget(2, 1, 9))
        copy = _record(base.vertices * 0.5 + 10, rid=5, cell=(2, 1))
        kept = dedup([base, copy], 0.05, 25)
        assert [r.id for r in kept] == [base.id]

    def test_max_reps(self, rng):
        recs = [_record(rng.uniform(0, 600, (6, 2)), rid=i) for i in range(5)]
        kept = dedup(recs, 0.0, 3)
        assert [r.id for r in kept] == [0, 1, 2]

    def test_empty(self):
        assert dedup([], 0.05, 25) == []


class TestGenerateCell:
    def test_easy_cell_fills(self):
        res = generate_cell(CellTarget(0, 0, 9, 10), options=GenerationOptions(budget=2000), master_seed=0)
        assert res.status == "filled"
        assert len(res.records) == 10

    def test_skipped(self):
        res = generate_cell(CellTarget(1, 1, 9, 5), skipped=True)
        assert res.status == "infeasible" and res.attempts == 0 and res.skipped

    def test_hard_cell_partial_or_infeasible(self):
        res = generate_cell(CellTarget(5, 5, 9, 3), options=GenerationOptions(budget=40))
        assert res.status in {"partial", "infeasible", "filled"}
        assert res.attempts <= 40

    def test_kept_pairwise_distinct(self):
        res = generate_cell(CellTarget(2, 1, 9, 6), options=GenerationOptions(budget=1000), master_seed=2)
        sigs = [signature(r.vertices) for r in res.records]
        for i in range(len(sigs)):
            for j in range(i + 1, len(sigs)):
                assert signature_distance(sigs[i], sigs[j]) > 0.05

    def test_bootstrap_sources_used(self):
        src = _accepted(CellTarget(3, 1, 9), family="rail_weave")
        src.id = 77
        opts = GenerationOptions(budget=300, bootstrap_sources=(src,))
        res = generate_cell(CellTarget(3, 1, 10, 3), options=opts, master_seed=1)
        boots = [r for r in res.records if r.family == "bootstrap"]
        assert boots and all(r.provenance == 77 for r in boots)


class TestGrid:
    def test_records_self_consistent(self, small_corpus):
        records, _ = small_corpus
        assert records
        for r in records:
            assert verify_record(r) == []
            assert tortuosity_bin(sinuosity(r.vertices)) == r.tbin
            assert crossing_bin(len(brute_force_crossings(r.vertices))) == r.sbin
            assert independent_recheck(r.vertices, G.glyph_radius_r, G.glyph_padding_p) == []

    def test_ids_sequential(self, small_corpus):
        records, _ = small_corpus
        assert [r.id for r in records] == list(range(len(records)))

    def test_coverage_accounting(self, small_corpus):
        records, results = small_corpus
        grid = GridSpec(tbins=(1, 2, 3), sbins=(0, 1), n_points=(9,), quota=4)
        rows = coverage_rows(results)
        assert len(rows) == len(grid.targets())
        assert rows == coverage_from_records(records, grid)

    def test_skip_list_reported(self):
        grid = GridSpec(tbins=(1,), sbins=(0, 1), n_points=(9,), quota=1, skip=((1, 1),))
        recs, res = generate_grid(grid, options=GenerationOptions(budget=200))
        statuses = [row[-1] for row in coverage_rows(res)]
        assert statuses == ["filled", "skipped"]
        assert coverage_from_records(recs, grid) == coverage_rows(res)

    def test_jobs_independent(self):
        grid = GridSpec(tbins=(1, 2), sbins=(0, 1), n_points=(9,), quota=2)
        opts = GenerationOptions(budget=300)
        a, _ = generate_grid(grid, options=opts, master_seed=5, jobs=1)
        b, _ = generate_grid(grid, options=opts, master_seed=5, jobs=3)
        assert [json.dumps(r.to_json()) for r in a] == [json.dumps(r.to_json()) for r in b]

    def test_roundtrip(self, small_corpus, tmp_path):
        records, _ = small_corpus
        path = tmp_path / "bb.jsonl"
        write_backbones(path, records)
        back = read_backbones(path)
        assert [r.to_json() for r in back] == [r.to_json() for r in records]
        assert all(verify_record(r) == [] for r in back)

    def test_grid_spec_dict_roundtrip(self):
        g = GridSpec(tbins=(1,), sbins=(2, 3), n_points=(9, 11), quota=3, skip=((1, 2),))
        assert GridSpec.from_dict(g.to_dict()) == g
