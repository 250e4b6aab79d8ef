import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from egvs.beams import LidarSpec, Placement
from egvs.cli import reference_table_path
from egvs.exceptions import InputError
from egvs.grid import EntropyGrid, GridSpec, RoiSpec, accumulate_tpog, discretize, entropy_grid
from egvs.ingest_io import rasterize_frame
from egvs.metric import EgvsParams, evaluate_placement, placement_hits
from egvs.scene import AxisAlignedBox, GroundPlane, build_scene
from egvs.search import (
    RankingRow, RankingTable, SweepSpec, exhaustive_multi, greedy_multi, rank_correlation, refine, sweep,
)
from egvs.synth import generate_traffic
from egvs.traversal import HitCountGrid
from oracles import exhaustive_best

LANE_ROI = RoiSpec((200.0, 250.0, 2.5), (20.0, 40.0, 5.0), 0.5)
LITE = LidarSpec(8, math.radians(1.0), (math.radians(-20), math.radians(5)), max_range=80.0, name="lite")


@pytest.fixture(scope="module")
def lane_entropy():
    g = discretize(LANE_ROI)
    frames = generate_traffic(1, frames=160, vehicles=10, scenario="straight")
    return entropy_grid(accumulate_tpog(g, (rasterize_frame(f.objects, g) for f in frames)))


def reference_table():
    with open(reference_table_path()) as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    return rows


# ------------------------------------------------------------------ sweeps

def test_candidate_lattice():
    s = SweepSpec((0, 1, 0.5), (2, 2, 1), (1, 3, 1), build_scene(), LANE_ROI, LITE)
    assert s.candidate_count == 9
    assert [p.position for p in s.candidates()][:2] == [(0.0, 2.0, 1.0), (0.0, 2.0, 2.0)]
    assert SweepSpec((0, 0.95, 0.1), (0, 0, 1), (1, 1, 1), build_scene(), LANE_ROI, LITE).candidate_count == 10


@pytest.mark.parametrize("bad", [(0, 1, 0), (2, 1, 1), (0, 1, -1)])
def test_sweep_axis_validation(bad):
    with pytest.raises(InputError):
        SweepSpec(bad, (0, 0, 1), (1, 1, 1), build_scene(), LANE_ROI, LITE).candidates()


def test_sweep_budget(lane_entropy):
    s = SweepSpec((0, 9, 1), (0, 9, 1), (1, 2, 1), build_scene(), LANE_ROI, LITE, budget=150)
    with pytest.raises(InputError, match="200 candidates.*150"):
        sweep(s, lane_entropy)


def test_single_candidate_sweep_matches_evaluate(lane_entropy):
    s = SweepSpec((195, 195, 1), (250, 250, 1), (2, 2, 1), build_scene(), LANE_ROI, LITE)
    table = sweep(s, lane_entropy)
    ref = evaluate_placement(build_scene(), lane_entropy, LITE, Placement((195, 250, 2)), LANE_ROI)
    assert len(table) == 1
    assert table.rows[0].score == ref.score and table.rows[0].normalized_score == ref.normalized_score


def test_occluded_candidate_ranked_last(lane_entropy):
    box = AxisAlignedBox((203.0, 240.0, 0.0), (206.0, 243.0, 4.0))
    s = SweepSpec((195, 204.5, 9.5), (241.5, 241.5, 1), (2, 2, 1), build_scene([box]), LANE_ROI, LITE)
    table = sweep(s, lane_entropy)
    assert [r.placement.x for r in table.rows] == [195.0, 204.5]
    assert table.rows[-1].score == 0.0 and table.rows[0].score > 0


def test_three_by_three_finds_unobstructed_view(lane_entropy):
    # a wall along the lane with a 4 m gap in front of (197, 250)
    walls = [GroundPlane(0.0), AxisAlignedBox((198.0, 200.0, 0.0), (198.2, 248.0, 4.0)),
             AxisAlignedBox((198.0, 252.0, 0.0), (198.2, 300.0, 4.0))]
    scene = build_scene(walls)
    s = SweepSpec((193, 197, 2), (240, 260, 10), (1.5, 1.5, 1), scene, LANE_ROI, LITE)
    table = sweep(s, lane_entropy)
    scores = {p.position: evaluate_placement(scene, lane_entropy, LITE, p, LANE_ROI).score for p in s.candidates()}
    best = max(scores, key=scores.get)
    assert best == (197.0, 250.0, 1.5)
    assert table.rows[0].placement.position == best
    assert [r.score for r in table.rows] == sorted(scores.values(), reverse=True)


def test_argmax_invariant_under_entropy_scaling(lane_entropy):
    s = SweepSpec((193, 197, 2), (240, 260, 10), (1.5, 3.5, 2), build_scene(), LANE_ROI, LITE)
    a = sweep(s, lane_entropy)
    b = sweep(s, EntropyGrid(lane_entropy.grid, 3.5 * lane_entropy.entropy))
    assert [r.placement for r in a.rows] == [r.placement for r in b.rows]


def test_sweep_is_repeatable(lane_entropy):
    s = SweepSpec((193, 197, 4), (240, 260, 20), (1.5, 1.5, 1), build_scene(), LANE_ROI, LITE)
    assert sweep(s, lane_entropy).to_records() == sweep(s, lane_entropy).to_records()


def test_ranking_ties_and_exports(tmp_path):
    rows = [RankingRow(Placement((2, 0, 1)), 5.0, 0.5, 0.1), RankingRow(Placement((1, 0, 1)), 5.0, 0.5, 0.2),
            RankingRow(Placement((0, 0, 1)), 7.0, 0.7, 0.3)]
    t = RankingTable(rows)
    assert [r.placement.x for r in t.rows] == [0.0, 1.0, 2.0]
    recs = t.to_records()
    assert recs[0] == {"rank": 1, "x": 0.0, "y": 0.0, "z": 1.0, "egvs": 7.0, "normalized": 0.7}
    assert "seconds" in t.to_records(timing=True)[0]
    t.write_csv(tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text().splitlines()[:2] == ["rank,x,y,z,egvs,normalized", "1,0,0,1,7,0.69999999999999996"]
    t.write_json(tmp_path / "r.json")
    assert json.loads((tmp_path / "r.json").read_text()) == recs


# ------------------------------------------------------------------ refine

def test_refine_constant_evaluator_returns_start():
    r = refine(Placement((5.0, 5.0, 5.0)), [(0, 10), (0, 10), (0.5, 10)], lambda p: 4.0, step=2.0, tol=0.125)
    assert r.placement.position == (5.0, 5.0, 5.0)
    assert r.score == r.start_score == 4.0
    assert r.final_step == 0.125
    # the start plus six neighbours at each of steps 2, 1, 0.5, 0.25, 0.125
    assert r.evaluations == 1 + 6 * 5


def test_refine_converges_to_analytic_optimum():
    a = (3.0, 7.5, 2.0)
    r = refine(Placement((0.5, 0.5, 0.5)), [(0, 10), (0, 10), (0.5, 10)],
               lambda p: -sum((u - v) ** 2 for u, v in zip(p.position, a)))
    assert np.max(np.abs(np.subtract(r.placement.position, a))) <= r.final_step
    assert r.score >= r.start_score


def test_refine_clamps_to_bounds():
    r = refine(Placement((5.0, 5.0, 1.0)), [(0, 8), (0, 8), (0.5, 4)], lambda p: p.x + p.y - p.z)
    assert r.placement.position == (8.0, 8.0, 0.5)


def test_refine_rejects_bad_setup():
    with pytest.raises(InputError, match="outside bounds"):
        refine(Placement((11.0, 0.0, 1.0)), [(0, 10), (0, 10), (0.5, 10)], lambda p: 0.0)
    with pytest.raises(InputError, match="z lower bound"):
        refine(Placement((1.0, 0.0, 1.0)), [(0, 10)] * 3, lambda p: 0.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.5, 4))
def test_refine_never_worse_than_start(seed, step):
    rng = np.random.default_rng(seed)
    w = rng.normal(size=(4, 3))

    def f(p):
        x = np.asarray(p.position)
        return float(np.sum(np.sin(w[:3] @ x + w[3])))

    start = Placement(tuple(rng.uniform(0.5, 9.5, 3)))
    r = refine(start, [(0, 10), (0, 10), (0.5, 10)], f, step=step, tol=0.1)
    assert r.score >= f(start) and r.start_score == f(start)


def test_refine_on_real_metric(lane_entropy):
    scene = build_scene()
    r = refine(Placement((194.0, 245.0, 2.0)), [(190, 210), (230, 270), (0.5, 4)],
               lambda p: evaluate_placement(scene, lane_entropy, LITE, p, LANE_ROI).score, step=4.0, tol=1.0)
    assert r.score >= r.start_score


# ------------------------------------------------------------------ greedy

def counts_grid(values):
    g = GridSpec((0, 0, 0), (len(values), 1, 1), 1.0)
    return HitCountGrid(g, np.asarray(values))


def test_greedy_k1_is_argmax():
    e = EntropyGrid(GridSpec((0, 0, 0), (4, 1, 1), 1.0), np.array([1.0, 0.5, 0.25, 1.0]))
    grids = [counts_grid([1, 0, 0, 0]), counts_grid([0, 3, 3, 0]), counts_grid([0, 0, 0, 2])]
    cands = [Placement((i, 0, 1)) for i in range(3)]
    r = greedy_multi(1, cands, e, grids, EgvsParams(2))
    assert r.indices == [2] and r.score == 2.0


def test_greedy_disjoint_selects_both():
    e = EntropyGrid(GridSpec((0, 0, 0), (4, 1, 1), 1.0), np.ones(4))
    grids = [counts_grid([1, 1, 0, 0]), counts_grid([0, 0, 1, 1])]
    cands = [Placement((0, 0, 1)), Placement((1, 0, 1))]
    r = greedy_multi(2, cands, e, grids, EgvsParams(1))
    assert sorted(r.indices) == [0, 1] and r.score == 4.0 and r.gains == [2.0, 2.0]


def test_greedy_skips_duplicate():
    e = EntropyGrid(GridSpec((0, 0, 0), (4, 1, 1), 1.0), np.ones(4))
    a = [1, 1, 1, 0]
    grids = [counts_grid(a), counts_grid(a), counts_grid([0, 0, 0, 1])]
    cands = [Placement((0, 0, 1)), Placement((1, 0, 1)), Placement((2, 0, 1))]
    r = greedy_multi(2, cands, e, grids, EgvsParams(1))
    assert r.indices == [0, 2]
    assert exhaustive_multi(2, e, grids, EgvsParams(1)) == ((0, 2), 4.0)


def test_greedy_ties_break_lexicographically():
    e = EntropyGrid(GridSpec((0, 0, 0), (2, 1, 1), 1.0), np.ones(2))
    grids = [counts_grid([1, 0]), counts_grid([0, 1])]
    cands = [Placement((5, 0, 1)), Placement((1, 0, 1))]
    assert greedy_multi(1, cands, e, grids).indices == [1]


def test_greedy_errors():
    e = EntropyGrid(GridSpec((0, 0, 0), (2, 1, 1), 1.0), np.ones(2))
    with pytest.raises(InputError, match="empty"):
        greedy_multi(1, [], e, [])
    with pytest.raises(InputError):
        greedy_multi(3, [Placement((0, 0, 1))], e, [counts_grid([1, 0])])


@pytest.mark.parametrize("seed", range(25))
def test_greedy_bound_small_instances(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(5, 30))
    n = int(rng.integers(2, 9))
    g = GridSpec((0, 0, 0), (m, 1, 1), 1.0)
    h = rng.uniform(0, 1, m)
    counts = [rng.integers(0, 4, m) * (rng.uniform(size=m) < 0.5) for _ in range(n)]
    gamma = int(rng.integers(1, 5))
    cands = [Placement((float(i), 0.0, 1.0)) for i in range(n)]
    for k in range(1, min(3, n) + 1):
        r = greedy_multi(k, cands, EntropyGrid(g, h), [HitCountGrid(g, c) for c in counts], EgvsParams(gamma))
        best, _ = exhaustive_best(k, h, counts, gamma)
        assert r.score >= (1 - 1 / math.e) * best - 1e-12


def test_greedy_on_placements(lane_entropy):
    scene = build_scene()
    cands = [Placement((x, 250.0, 2.0)) for x in (192.0, 196.0, 204.0, 208.0)]
    grids = [placement_hits(scene, LITE, p, LANE_ROI)[0] for p in cands]
    r = greedy_multi(2, cands, lane_entropy, grids)
    assert len(set(r.indices)) == 2
    assert r.score == pytest.approx(sum(r.gains), rel=1e-12)


# ------------------------------------------------------------------ correlation

def test_correlation_identity_and_reverse():
    x = [3.0, 1.0, 4.0, 1.5, 9.0]
    r = rank_correlation(x, x)
    assert r["spearman"] == pytest.approx(1.0, abs=1e-15) and r["pearson"] == pytest.approx(1.0, abs=1e-15)
    assert rank_correlation(x, [-v for v in x])["spearman"] == pytest.approx(-1.0, abs=1e-15)


def test_correlation_ties_use_average_ranks():
    from scipy import stats

    a = [1, 2, 2, 3, 5, 5, 5, 8]
    b = [2, 1, 4, 3, 7, 6, 6, 9]
    assert rank_correlation(a, b)["spearman"] == pytest.approx(stats.spearmanr(a, b).statistic, abs=1e-12)
    assert rank_correlation(a, b)["pearson"] == pytest.approx(stats.pearsonr(a, b).statistic, abs=1e-12)


@pytest.mark.parametrize("a,b,pattern", [
    ([1, 2, 3], [1, 2], "length mismatch"),
    ([1, 2], [1, 2], "at least 3"),
    ([1, 2, float("nan")], [1, 2, 3], "non-finite"),
    ([1, 2, 3], [4, 4, 4], "zero variance in references"),
])
def test_correlation_errors(a, b, pattern):
    with pytest.raises(InputError, match=pattern):
        rank_correlation(a, b)


def test_reference_table_fixture_correlation():
    rows = reference_table()
    assert len(rows) == 13
    egvs_col = np.array([float(r["egvs"]) for r in rows])
    ap = np.array([float(r["ap_combined"]) for r in rows])
    r = rank_correlation(egvs_col, ap)
    # no ties in either column, so the rank-difference formula applies
    d = np.argsort(np.argsort(egvs_col)) - np.argsort(np.argsort(ap))
    formula = 1 - 6 * np.sum(d ** 2) / (13 * (13 ** 2 - 1))
    assert abs(r["spearman"] - formula) <= 1e-12
    assert abs(r["spearman"] - 0.99451) <= 1e-5
    assert r["pearson"] > 0.95 and r["n"] == 13


def test_reference_table_combined_columns_are_sums():
    for r in reference_table():
        assert float(r["ap_combined"]) == pytest.approx(float(r["ap_bev"]) + float(r["ap_3d"]), abs=0.011)
        assert float(r["ap_r40_combined"]) == pytest.approx(float(r["ap_r40_bev"]) + float(r["ap_r40_3d"]), abs=0.011)
