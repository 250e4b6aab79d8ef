"""Placement search: lattice sweeps, pattern-search refinement, greedy multi-sensor
selection, and rank correlation against external quality measures."""
from __future__ import annotations

import csv
import itertools
import json
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .beams import LidarSpec, Placement
from .exceptions import InputError
from .grid import EntropyGrid, RoiSpec
from .metric import EgvsParams, egvs, egvs_multi, placement_hits
from .scene import Scene
from .traversal import HitCountGrid

DEFAULT_BUDGET = 100_000


def _axis_values(rng: tuple[float, float, float], name: str) -> np.ndarray:
    lo, hi, step = (float(v) for v in rng)
    if not step > 0:
        raise InputError(f"{name} step must be positive")
    if lo > hi:
        raise InputError(f"{name} range requires min <= max")
    n = math.floor((hi - lo) / step + 1 + 1e-9)
    return lo + step * np.arange(n)


@dataclass(frozen=True)
class SweepSpec:
    x_range: tuple[float, float, float]
    y_range: tuple[float, float, float]
    z_range: tuple[float, float, float]
    scene: Scene = field(repr=False)
    roi: RoiSpec
    lidar: LidarSpec
    params: EgvsParams = EgvsParams()
    miss_policy: str = "extend"
    budget: int = DEFAULT_BUDGET

    def candidates(self) -> list[Placement]:
        xs = _axis_values(self.x_range, "x")
        ys = _axis_values(self.y_range, "y")
        zs = _axis_values(self.z_range, "z")
        return [Placement((x, y, z)) for x, y, z in itertools.product(xs, ys, zs)]

    @property
    def candidate_count(self) -> int:
        return math.prod(len(_axis_values(r, a)) for r, a in zip((self.x_range, self.y_range, self.z_range), "xyz"))


@dataclass(frozen=True)
class RankingRow:
    placement: Placement
    score: float
    normalized_score: float
    elapsed: float = field(default=0.0, compare=False)


@dataclass
class RankingTable:
    rows: list[RankingRow]

    def __post_init__(self):
        self.rows = sorted(self.rows, key=lambda r: (-r.score, r.placement.position))

    def __len__(self):
        return len(self.rows)

    def to_records(self, timing: bool = False) -> list[dict]:
        out = []
        for rank, r in enumerate(self.rows, start=1):
            rec = {"rank": rank, **r.placement.to_dict(), "egvs": r.score, "normalized": r.normalized_score}
            if timing:
                rec["seconds"] = r.elapsed
            out.append(rec)
        return out

    def write_csv(self, path, timing: bool = False) -> None:
        recs = self.to_records(timing)
        fields = ["rank", "x", "y", "z", "egvs", "normalized"] + (["seconds"] if timing else [])
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
            w.writeheader()
            for rec in recs:
                w.writerow({k: (format(v, ".17g") if isinstance(v, float) else v) for k, v in rec.items()})

    def write_json(self, path, timing: bool = False) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_records(timing), fh, indent=2)
            fh.write("\n")


def sweep(spec: SweepSpec, entropy: EntropyGrid, progress: Callable[[int, int], None] | None = None) -> RankingTable:
    """Score every lattice candidate; the entropy grid is computed once by the caller."""
    count = spec.candidate_count
    if count > spec.budget:
        raise InputError(f"sweep has {count} candidates, exceeding the budget of {spec.budget}")
    rows = []
    for k, p in enumerate(spec.candidates()):
        t0 = time.perf_counter()
        hits, _, _ = placement_hits(spec.scene, spec.lidar, p, spec.roi, entropy.grid, spec.miss_policy)
        res = egvs(entropy, hits, spec.params, p)
        rows.append(RankingRow(p, res.score, res.normalized_score, time.perf_counter() - t0))
        if progress:
            progress(k + 1, count)
    return RankingTable(rows)


@dataclass
class RefineResult:
    placement: Placement
    score: float
    start_score: float
    evaluations: int
    final_step: float


def refine(
    start: Placement,
    bounds: Sequence[tuple[float, float]],
    evaluator: Callable[[Placement], float],
    step: float = 2.0,
    tol: float = 0.125,
) -> RefineResult:
    """Maximize ``evaluator`` by compass search over (x, y, z).

    Each poll tries +/- ``step`` along every axis (clamped to ``bounds``) and
    moves to the best strict improvement; a poll without one halves the step.
    Stops once the step drops below ``tol``.
    """
    lo = np.array([b[0] for b in bounds], dtype=np.float64)
    hi = np.array([b[1] for b in bounds], dtype=np.float64)
    x = np.asarray(start.position, dtype=np.float64)
    if np.any(x < lo) or np.any(x > hi):
        raise InputError(f"start {start.position} outside bounds")
    if not step > 0 or not tol > 0:
        raise InputError("step and tol must be positive")
    if not lo[2] > 0:
        raise InputError("z lower bound must be > 0")
    cache: dict[tuple, float] = {}

    def f(pt):
        key = tuple(pt.tolist())
        if key not in cache:
            cache[key] = float(evaluator(Placement(key)))
        return cache[key]

    best = f(x)
    first = best
    while step >= tol:
        move, move_score = None, best
        for axis in range(3):
            for sign in (1.0, -1.0):
                cand = x.copy()
                cand[axis] = min(max(cand[axis] + sign * step, lo[axis]), hi[axis])
                if np.array_equal(cand, x):
                    continue
                s = f(cand)
                if s > move_score:
                    move, move_score = cand, s
        if move is None:
            step /= 2.0
        else:
            x, best = move, move_score
    return RefineResult(Placement(tuple(x.tolist())), best, first, len(cache), step * 2.0)


@dataclass
class GreedyResult:
    selected: list[Placement]
    indices: list[int]
    gains: list[float]
    score: float


def greedy_multi(
    k: int,
    candidates: Sequence[Placement],
    entropy: EntropyGrid,
    hit_grids: Sequence[HitCountGrid],
    params: EgvsParams = EgvsParams(),
) -> GreedyResult:
    """Greedy maximization of the capped multi-sensor score.

    Each step adds the candidate with the largest marginal gain; ties go to
    the lexicographically smallest (x, y, z).
    """
    if not candidates:
        raise InputError("candidate list is empty")
    if len(hit_grids) != len(candidates):
        raise InputError("need one hit grid per candidate")
    if not 1 <= k <= len(candidates):
        raise InputError(f"k must be in [1, {len(candidates)}], got {k}")
    h = entropy.entropy
    gamma = params.gamma
    total = np.zeros(entropy.grid.size, dtype=np.int64)
    current = 0.0
    chosen: list[int] = []
    gains: list[float] = []
    order = sorted(range(len(candidates)), key=lambda i: candidates[i].position)
    for _ in range(k):
        best_i, best_score = None, -math.inf
        for i in order:
            if i in chosen:
                continue
            s = float(np.sum(h * np.minimum(total + hit_grids[i].counts, gamma)))
            if s > best_score:
                best_i, best_score = i, s
        chosen.append(best_i)
        total += hit_grids[best_i].counts
        gains.append(best_score - current)
        current = best_score
    final = egvs_multi(entropy, [hit_grids[i] for i in chosen], params, [candidates[i] for i in chosen])
    return GreedyResult([candidates[i] for i in chosen], chosen, gains, final.score)


def exhaustive_multi(k: int, entropy: EntropyGrid, hit_grids: Sequence[HitCountGrid],
                     params: EgvsParams = EgvsParams()) -> tuple[tuple[int, ...], float]:
    """Best k-subset by enumeration (small instances only)."""
    best, best_score = None, -math.inf
    for combo in itertools.combinations(range(len(hit_grids)), k):
        s = egvs_multi(entropy, [hit_grids[i] for i in combo], params).score
        if s > best_score:
            best, best_score = combo, s
    return best, best_score


def _average_ranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x))
    xs = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    da = a - a.mean()
    db = b - b.mean()
    return float(np.sum(da * db) / math.sqrt(float(np.sum(da * da)) * float(np.sum(db * db))))


def rank_correlation(scores: Sequence[float], references: Sequence[float]) -> dict:
    a = np.asarray(scores, dtype=np.float64)
    b = np.asarray(references, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise InputError(f"length mismatch: {a.shape} vs {b.shape}")
    if len(a) < 3:
        raise InputError("need at least 3 observations")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise InputError("missing or non-finite values")
    for name, col in (("scores", a), ("references", b)):
        if np.all(col == col[0]):
            raise InputError(f"zero variance in {name}")
    return {
        "spearman": _pearson(_average_ranks(a), _average_ranks(b)),
        "pearson": _pearson(a, b),
        "n": int(len(a)),
    }
