import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from egvs.beams import BeamSet, Placement, empty_frame_segments, lidar_preset
from egvs.exceptions import InputError
from egvs.grid import EntropyGrid, GridSpec, RoiSpec, discretize, uniform_entropy
from egvs.metric import EgvsParams, egvs, egvs_multi, evaluate_placement, placement_hits
from egvs.scene import AxisAlignedBox, build_scene
from egvs.traversal import HitCountGrid, hit_counts

LINE = GridSpec((0, 0, 0), (3, 1, 1), 1.0)
ROI = RoiSpec((200.0, 250.0, 2.5), (50.0, 100.0, 5.0), 0.5)


def fixture_grids(h, c, grid=LINE):
    return EntropyGrid(grid, np.asarray(h, float)), HitCountGrid(grid, np.asarray(c))


def test_hand_fixture():
    e, c = fixture_grids([1.0, 0.5, 0.0], [4, 1, 7])
    r = egvs(e, c, EgvsParams(3), contributions=True)
    assert r.score == 3.5
    assert list(r.per_voxel_contribution) == [3.0, 0.5, 0.0]
    assert r.normalized_score == 3.5 / (1.5 * 3)
    assert r.params.gamma == 3 and r.grid_shape == (3, 1, 1)


def test_zero_counts_or_zero_entropy():
    e, c = fixture_grids([1.0, 0.5, 0.2], [0, 0, 0])
    assert egvs(e, c).score == 0.0
    e, c = fixture_grids([0.0, 0.0, 0.0], [4, 1, 7])
    r = egvs(e, c)
    assert r.score == 0.0 and r.normalized_score == 0.0


def test_gamma_validation_and_default():
    assert EgvsParams().gamma == 5
    for bad in (0, -1, 2.5):
        with pytest.raises(InputError, match="gamma"):
            EgvsParams(bad)


def test_grid_mismatch_reports_shapes():
    e = EntropyGrid(LINE, np.ones(3))
    c = HitCountGrid(GridSpec((0, 0, 0), (1, 3, 1), 1.0), np.ones(3))
    with pytest.raises(InputError, match=r"\(3, 1, 1\).*\(1, 3, 1\)"):
        egvs(e, c)


def test_multi_single_equals_single():
    e, c = fixture_grids([1.0, 0.5, 0.25], [4, 1, 7])
    assert egvs_multi(e, [c], EgvsParams(3)).score == egvs(e, c, EgvsParams(3)).score
    with pytest.raises(InputError):
        egvs_multi(e, [], EgvsParams(3))


def test_multi_disjoint_is_additive():
    e, a = fixture_grids([1.0, 0.5, 0.25], [2, 0, 1])
    _, b = fixture_grids([1.0, 0.5, 0.25], [0, 3, 0])
    p = EgvsParams(3)
    assert egvs_multi(e, [a, b], p).score == egvs(e, a, p).score + egvs(e, b, p).score


def test_multi_identical_saturates_at_gamma_one():
    e, a = fixture_grids([1.0, 0.5, 0.25], [2, 0, 1])
    p = EgvsParams(1)
    assert egvs_multi(e, [a, a], p).score == egvs(e, a, p).score


def test_multi_sums_before_capping():
    e, a = fixture_grids([1.0, 1.0, 1.0], [2, 2, 0])
    # capping each sensor first would give 8; the summed count 4 caps at 3 per voxel
    assert egvs_multi(e, [a, a], EgvsParams(3)).score == 6.0


def random_instance(rng, m=60):
    g = GridSpec((0, 0, 0), (m, 1, 1), 1.0)
    return EntropyGrid(g, rng.uniform(0, 1, m)), rng.integers(0, 12, m), g


@pytest.mark.parametrize("seed", range(20))
def test_gamma_monotone_and_constant_beyond_max(seed):
    rng = np.random.default_rng(seed)
    e, counts, g = random_instance(rng)
    hits = HitCountGrid(g, counts)
    scores = [egvs(e, hits, EgvsParams(k)).score for k in range(1, 20)]
    assert all(b >= a for a, b in zip(scores, scores[1:]))
    top = int(counts.max())
    assert len({egvs(e, hits, EgvsParams(k)).score for k in range(max(top, 1), top + 5)}) == 1


@settings(max_examples=100)
@given(st.integers(0, 2**32 - 1), st.floats(0, 10, allow_nan=False), st.integers(1, 8))
def test_linearity_in_entropy(seed, alpha, gamma):
    rng = np.random.default_rng(seed)
    e, counts, g = random_instance(rng)
    hits = HitCountGrid(g, counts)
    base = egvs(e, hits, EgvsParams(gamma)).score
    scaled = egvs(EntropyGrid(g, alpha * e.entropy), hits, EgvsParams(gamma)).score
    assert scaled == pytest.approx(alpha * base, rel=1e-12, abs=1e-12)


@settings(max_examples=100)
@given(st.integers(0, 2**32 - 1), st.integers(1, 8))
def test_separability(seed, gamma):
    rng = np.random.default_rng(seed)
    e, counts, g = random_instance(rng)
    parts = rng.integers(0, 4, g.size)
    total = egvs(e, HitCountGrid(g, counts), EgvsParams(gamma)).score
    pieces = sum(egvs(EntropyGrid(g, np.where(parts == k, e.entropy, 0.0)), HitCountGrid(g, counts),
                      EgvsParams(gamma)).score for k in range(4))
    assert pieces == pytest.approx(total, rel=1e-12)


def test_contributions_sum_to_score(demo_entropy, demo_built):
    r = evaluate_placement(demo_built, demo_entropy, lidar_preset("vlp32c"), Placement((200.0, 255.0, 2.0)),
                           ROI, contributions=True)
    assert r.per_voxel_contribution.shape == (200_000,)
    assert math.isclose(r.per_voxel_contribution.sum(), r.score, rel_tol=1e-9)
    assert r.emitted_beams == 57_600 and 0 < r.kept_beams <= 57_600
    assert 0 < r.normalized_score <= 1
    d = r.to_dict()
    assert d["gamma"] == 5 and d["placements"] == [{"x": 200.0, "y": 255.0, "z": 2.0}]
    assert "elapsed" not in d


def test_beam_monotonicity():
    rng = np.random.default_rng(3)
    g = GridSpec((0, 0, 0), (6, 6, 6), 1.0)
    e = EntropyGrid(g, rng.uniform(0, 1, g.size))
    p = Placement((1.0, 1.0, 1.0))
    bs = BeamSet.from_segments(p, rng.uniform(0, 6, (5, 3)), rng.uniform(0, 6, (5, 3)))
    prev = egvs(e, hit_counts(bs, g), EgvsParams(2)).score
    for _ in range(30):
        bs = bs.concat(BeamSet.from_segments(p, rng.uniform(0, 6, (3, 3)), rng.uniform(0, 6, (3, 3))))
        cur = egvs(e, hit_counts(bs, g), EgvsParams(2)).score
        assert cur >= prev
        prev = cur


def test_uniform_half_probability_reduces_to_total_visits():
    g = discretize(ROI)
    spec = lidar_preset("vlp32c-uniform")
    p = Placement((200.0, 250.0, 8.0))
    hits, kept, _ = placement_hits(build_scene(), spec, p, ROI)
    assert kept > 0
    top = int(hits.counts.max())
    r = evaluate_placement(build_scene(), uniform_entropy(g, 1.0), spec, p, ROI, EgvsParams(top))
    assert r.score == float(hits.counts.sum(dtype=np.int64))


def test_full_shell_gives_zero():
    g = discretize(ROI)
    spec = lidar_preset("vlp32c-uniform")
    p = Placement((200.0, 250.0, 8.0))
    lo, hi = np.array([198.0, 248.0, 6.0]), np.array([202.0, 252.0, 10.0])
    t = 0.1
    shell = [
        AxisAlignedBox(tuple(lo), (lo[0] + t, hi[1], hi[2])), AxisAlignedBox((hi[0] - t, lo[1], lo[2]), tuple(hi)),
        AxisAlignedBox(tuple(lo), (hi[0], lo[1] + t, hi[2])), AxisAlignedBox((lo[0], hi[1] - t, lo[2]), tuple(hi)),
        AxisAlignedBox(tuple(lo), (hi[0], hi[1], lo[2] + t)), AxisAlignedBox((lo[0], lo[1], hi[2] - t), tuple(hi)),
    ]
    open_ = evaluate_placement(build_scene(), uniform_entropy(g, 1.0), spec, p, ROI)
    closed = evaluate_placement(build_scene(shell), uniform_entropy(g, 1.0), spec, p, ROI)
    assert open_.score > 0
    assert closed.score == 0.0 and closed.kept_beams == 0


def test_wall_over_half_the_roi_halves_score():
    g = discretize(ROI)
    spec = lidar_preset("vlp32c-uniform")
    p = Placement((200.0, 250.0, 2.0))
    wall = AxisAlignedBox((200.1, 150.0, -1.0), (200.3, 350.0, 10.0))
    h = uniform_entropy(g, 1.0)
    full = evaluate_placement(build_scene(), h, spec, p, ROI, EgvsParams(1)).score
    half = evaluate_placement(build_scene([wall]), h, spec, p, ROI, EgvsParams(1)).score
    assert abs(half / full - 0.5) <= 0.05 * 0.5


def test_occlusion_monotone_on_demo(demo_entropy, demo_geometry):
    from conftest import OCCLUSION_WALL

    prims, meshes = demo_geometry
    spec = lidar_preset("vlp32c-uniform")
    p = Placement((195.0, 255.0, 2.0))
    base = evaluate_placement(build_scene(prims, meshes), demo_entropy, spec, p, ROI).score
    walled = evaluate_placement(build_scene(prims + [OCCLUSION_WALL], meshes), demo_entropy, spec, p, ROI).score
    assert walled < base


def test_placement_hits_rejects_other_grid():
    with pytest.raises(InputError):
        placement_hits(build_scene(), lidar_preset("vlp32c"), Placement((200.0, 250.0, 2.0)), ROI,
                       GridSpec((0, 0, 0), (100, 200, 10), 0.5))
