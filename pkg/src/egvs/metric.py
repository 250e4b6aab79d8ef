"""Entropy-guided visibility score: capped, entropy-weighted beam coverage."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .beams import LidarSpec, Placement, empty_frame_segments
from .exceptions import InputError
from .grid import EntropyGrid, GridSpec, RoiSpec, check_same_grid, discretize
from .scene import Scene
from .traversal import HitCountGrid, hit_counts

DEFAULT_GAMMA = 5


@dataclass(frozen=True)
class EgvsParams:
    gamma: int = DEFAULT_GAMMA

    def __post_init__(self):
        if int(self.gamma) != self.gamma or self.gamma < 1:
            raise InputError(f"gamma must be a positive integer, got {self.gamma}")
        object.__setattr__(self, "gamma", int(self.gamma))


@dataclass(frozen=True, eq=False)
class EgvsResult:
    score: float
    normalized_score: float
    placements: tuple[Placement, ...]
    params: EgvsParams
    grid_shape: tuple[int, int, int]
    per_voxel_contribution: Optional[np.ndarray] = None
    kept_beams: Optional[int] = None
    emitted_beams: Optional[int] = None
    elapsed: float = field(default=0.0, compare=False)

    def to_dict(self) -> dict:
        """JSON-ready summary. Wall-clock timing is left out so the output is reproducible."""
        out = {
            "score": self.score,
            "normalized_score": self.normalized_score,
            "gamma": self.params.gamma,
            "placements": [p.to_dict() for p in self.placements],
            "grid_shape": list(self.grid_shape),
        }
        if self.emitted_beams is not None:
            out["emitted_beams"] = self.emitted_beams
            out["kept_beams"] = self.kept_beams
        return out


def _capped_score(entropy: EntropyGrid, counts: np.ndarray, params: EgvsParams, placements, contributions: bool):
    h = entropy.entropy
    capped = np.minimum(counts, params.gamma).astype(np.float64)
    contrib = h * capped
    # numpy's pairwise summation has a fixed order, independent of thread count
    score = float(np.sum(contrib))
    ceiling = float(np.sum(h)) * params.gamma
    normalized = score / ceiling if ceiling > 0 else 0.0
    return EgvsResult(
        score=score,
        normalized_score=normalized,
        placements=tuple(placements),
        params=params,
        grid_shape=entropy.grid.counts,
        per_voxel_contribution=contrib if contributions else None,
    )


def egvs(entropy: EntropyGrid, hits: HitCountGrid, params: EgvsParams = EgvsParams(),
         placement: Placement | None = None, contributions: bool = False) -> EgvsResult:
    """Sum over voxels of H(v) * min(gamma, beams crossing v)."""
    check_same_grid(entropy.grid, hits.grid)
    return _capped_score(entropy, hits.counts, params, [placement] if placement else [], contributions)


def egvs_multi(entropy: EntropyGrid, hit_grids: Sequence[HitCountGrid], params: EgvsParams = EgvsParams(),
               placements: Sequence[Placement] = (), contributions: bool = False) -> EgvsResult:
    """Several sensors: per-voxel counts are summed across sensors before capping."""
    if not hit_grids:
        raise InputError("egvs_multi needs at least one hit grid")
    total = np.zeros(entropy.grid.size, dtype=np.uint64)
    for hg in hit_grids:
        check_same_grid(entropy.grid, hg.grid)
        total += hg.counts
    return _capped_score(entropy, total, params, placements, contributions)


def placement_hits(scene: Scene, spec: LidarSpec, placement: Placement, roi: RoiSpec,
                   grid: GridSpec | None = None, miss_policy: str = "extend") -> tuple[HitCountGrid, int, int]:
    """Hit counts of one placement plus its (kept, emitted) beam counts."""
    roi_grid = discretize(roi)
    if grid is not None:
        check_same_grid(grid, roi_grid)
    grid = roi_grid
    beams = empty_frame_segments(scene, placement, spec, roi, miss_policy)
    return hit_counts(beams, grid), beams.kept_count, beams.emitted_count


def evaluate_placement(
    scene: Scene,
    tpog_entropy: EntropyGrid,
    spec: LidarSpec,
    placement: Placement,
    roi: RoiSpec,
    params: EgvsParams = EgvsParams(),
    miss_policy: str = "extend",
    contributions: bool = False,
) -> EgvsResult:
    t0 = time.perf_counter()
    hits, kept, emitted = placement_hits(scene, spec, placement, roi, tpog_entropy.grid, miss_policy)
    res = egvs(tpog_entropy, hits, params, placement, contributions)
    return EgvsResult(
        score=res.score,
        normalized_score=res.normalized_score,
        placements=res.placements,
        params=params,
        grid_shape=res.grid_shape,
        per_voxel_contribution=res.per_voxel_contribution,
        kept_beams=kept,
        emitted_beams=emitted,
        elapsed=time.perf_counter() - t0,
    )
