"""Voxel grid over the region of interest, traffic occupancy grid and entropy."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .exceptions import InputError

_DIVISIBILITY_TOL = 1e-9


@dataclass(frozen=True)
class RoiSpec:
    """Axis-aligned cuboid given by its center, (w, l, h) extents and voxel size."""

    center: tuple[float, float, float]
    dims: tuple[float, float, float]
    resolution: float

    def __post_init__(self):
        center = tuple(float(c) for c in self.center)
        dims = tuple(float(d) for d in self.dims)
        if len(center) != 3 or len(dims) != 3:
            raise InputError("ROI center and dims must be 3-vectors")
        for name, d in zip("wlh", dims):
            if not d > 0:
                raise InputError(f"ROI dimension {name} must be positive, got {d}")
        if not float(self.resolution) > 0:
            raise InputError(f"resolution must be positive, got {self.resolution}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "resolution", float(self.resolution))

    @property
    def box(self) -> tuple[np.ndarray, np.ndarray]:
        c = np.asarray(self.center)
        half = np.asarray(self.dims) / 2.0
        return c - half, c + half


@dataclass(frozen=True)
class GridSpec:
    """Voxel layout: min corner, per-axis counts and voxel edge length.

    Voxel ``(ix, iy, iz)`` has flat index ``ix + nx * (iy + ny * iz)``.
    """

    origin: tuple[float, float, float]
    counts: tuple[int, int, int]
    resolution: float

    def __post_init__(self):
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        object.__setattr__(self, "counts", tuple(int(n) for n in self.counts))
        object.__setattr__(self, "resolution", float(self.resolution))
        if any(n < 1 for n in self.counts):
            raise InputError(f"grid counts must be >= 1, got {self.counts}")
        if not self.resolution > 0:
            raise InputError("grid resolution must be positive")

    @property
    def size(self) -> int:
        nx, ny, nz = self.counts
        return nx * ny * nz

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.counts

    @property
    def lower(self) -> np.ndarray:
        return np.asarray(self.origin, dtype=np.float64)

    @property
    def upper(self) -> np.ndarray:
        return self.lower + np.asarray(self.counts, dtype=np.float64) * self.resolution

    def flat_index(self, ijk) -> np.ndarray:
        ijk = np.asarray(ijk, dtype=np.int64)
        nx, ny, _ = self.counts
        return ijk[..., 0] + nx * (ijk[..., 1] + ny * ijk[..., 2])

    def unravel(self, index) -> np.ndarray:
        index = np.asarray(index, dtype=np.int64)
        nx, ny, _ = self.counts
        ix = index % nx
        iy = (index // nx) % ny
        iz = index // (nx * ny)
        return np.stack([ix, iy, iz], axis=-1)

    def voxel_centers(self, index=None) -> np.ndarray:
        """World-frame centers for the given flat indices (all voxels by default)."""
        if index is None:
            index = np.arange(self.size)
        ijk = self.unravel(index)
        return self.lower + (ijk + 0.5) * self.resolution

    def position_to_index(self, points) -> np.ndarray:
        """Flat voxel index per point; -1 for points outside the closed grid box.

        Cells are lower-inclusive and upper-exclusive, except that the grid's
        max face belongs to the last voxel along that axis.
        """
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        q = (p - self.lower) / self.resolution
        n = np.asarray(self.counts)
        ijk = np.floor(q).astype(np.int64)
        on_max_face = q == n
        ijk = np.where(on_max_face, n - 1, ijk)
        inside = np.all((ijk >= 0) & (ijk < n), axis=1)
        out = np.full(len(p), -1, dtype=np.int64)
        out[inside] = self.flat_index(ijk[inside])
        return out

    def to_dict(self) -> dict:
        return {"origin": list(self.origin), "counts": list(self.counts), "resolution": self.resolution}


def discretize(roi: RoiSpec) -> GridSpec:
    counts = []
    for name, d in zip("wlh", roi.dims):
        ratio = d / roi.resolution
        n = round(ratio)
        if n < 1 or abs(ratio - n) > _DIVISIBILITY_TOL:
            raise InputError(f"{name} not divisible by resolution ({d} / {roi.resolution} = {ratio!r})")
        counts.append(n)
    lower, _ = roi.box
    return GridSpec(origin=tuple(lower), counts=tuple(counts), resolution=roi.resolution)


@dataclass(frozen=True, eq=False)
class Tpog:
    """Per-voxel occupancy frequency over ``frame_count`` traffic frames."""

    grid: GridSpec
    occupied_counts: np.ndarray
    frame_count: int
    prob: np.ndarray = field(init=False)

    def __post_init__(self):
        counts = np.asarray(self.occupied_counts, dtype=np.int64)
        if counts.shape != (self.grid.size,):
            raise InputError(f"occupied_counts has shape {counts.shape}, expected ({self.grid.size},)")
        if self.frame_count < 1:
            raise InputError("frame_count must be >= 1")
        if counts.min(initial=0) < 0 or counts.max(initial=0) > self.frame_count:
            raise InputError("occupied counts must lie in [0, frame_count]")
        counts.setflags(write=False)
        prob = counts / float(self.frame_count)
        prob.setflags(write=False)
        object.__setattr__(self, "occupied_counts", counts)
        object.__setattr__(self, "prob", prob)


@dataclass(frozen=True, eq=False)
class EntropyGrid:
    grid: GridSpec
    entropy: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.entropy, dtype=np.float64)
        if h.shape != (self.grid.size,):
            raise InputError(f"entropy has shape {h.shape}, expected ({self.grid.size},)")
        h.setflags(write=False)
        object.__setattr__(self, "entropy", h)


def accumulate_tpog(grid: GridSpec, frames: Iterable[Iterable[int]]) -> Tpog:
    """Count, per voxel, the frames in which it is occupied.

    Each frame is a collection of flat voxel indices; duplicates within a
    frame count once.
    """
    counts = np.zeros(grid.size, dtype=np.int64)
    T = 0
    for t, frame in enumerate(frames):
        idx = np.unique(np.fromiter(frame, dtype=np.int64))
        if idx.size and (idx[0] < 0 or idx[-1] >= grid.size):
            bad = idx[0] if idx[0] < 0 else idx[-1]
            raise InputError(f"frame {t}: voxel index {bad} outside [0, {grid.size})")
        counts[idx] += 1
        T += 1
    if T == 0:
        raise InputError("at least one frame is required (T = 0)")
    return Tpog(grid=grid, occupied_counts=counts, frame_count=T)


def binary_entropy(p) -> np.ndarray:
    """Shannon entropy in bits of a Bernoulli(p) variable, with 0 log 0 = 0."""
    p = np.asarray(p, dtype=np.float64)
    q = 1.0 - p
    out = np.zeros_like(p)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(p > 0, -p * np.log2(np.where(p > 0, p, 1.0)), 0.0)
        b = np.where(q > 0, -q * np.log2(np.where(q > 0, q, 1.0)), 0.0)
    out[...] = a + b
    return out


def entropy_grid(tpog: Tpog) -> EntropyGrid:
    return EntropyGrid(grid=tpog.grid, entropy=binary_entropy(tpog.prob))


def uniform_entropy(grid: GridSpec, value: float = 1.0) -> EntropyGrid:
    return EntropyGrid(grid=grid, entropy=np.full(grid.size, float(value)))


def check_same_grid(a: GridSpec, b: GridSpec, tol: float = 1e-9) -> None:
    """Raise unless both grids have the same shape and resolution and origins within ``tol``."""
    same = (
        a.counts == b.counts
        and abs(a.resolution - b.resolution) <= tol
        and all(abs(x - y) <= tol for x, y in zip(a.origin, b.origin))
    )
    if not same:
        raise InputError(f"grid mismatch: {a.counts} @ {a.origin} vs {b.counts} @ {b.origin}")

