"""Exact segment/voxel traversal (3-D DDA) and per-voxel beam hit counts."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np

from .beams import BeamSet
from .exceptions import InputError
from .grid import GridSpec, check_same_grid

BOX_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class HitCountGrid:
    grid: GridSpec
    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.uint32)
        if c.shape != (self.grid.size,):
            raise InputError(f"counts has shape {c.shape}, expected ({self.grid.size},)")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    def __add__(self, other: "HitCountGrid") -> "HitCountGrid":
        check_same_grid(self.grid, other.grid)
        return HitCountGrid(self.grid, self.counts.astype(np.uint64) + other.counts)


@nb.njit(cache=True)
def _start_cell(q, dq, n):
    if dq > 0.0:
        c = math.floor(q)
    elif dq < 0.0:
        c = math.ceil(q) - 1
    else:
        c = math.floor(q)
    c = int(c)
    if c < 0:
        c = 0
    elif c > n - 1:
        c = n - 1
    return c


@nb.njit(cache=True)
def _next_crossing(q0, dq, cell):
    if dq > 0.0:
        return (cell + 1 - q0) / dq
    if dq < 0.0:
        return (cell - q0) / dq
    return np.inf


@nb.njit(cache=True)
def _dda(q0, dq, length, n, out, write):
    """Walk ``q0 + s * dq`` for ``s`` in [0, length] in voxel units.

    Cells are visited in order of increasing ``s``; cells entered only at a
    single point (edge or corner crossings) are skipped by stepping every tied
    axis at once. Returns the number of cells visited.
    """
    cx = _start_cell(q0[0], dq[0], n[0])
    cy = _start_cell(q0[1], dq[1], n[1])
    cz = _start_cell(q0[2], dq[2], n[2])
    tx = _next_crossing(q0[0], dq[0], cx)
    ty = _next_crossing(q0[1], dq[1], cy)
    tz = _next_crossing(q0[2], dq[2], cz)
    sx = 1 if dq[0] > 0.0 else -1
    sy = 1 if dq[1] > 0.0 else -1
    sz = 1 if dq[2] > 0.0 else -1
    k = 0
    while True:
        if write:
            out[k] = cx + n[0] * (cy + n[1] * cz)
        k += 1
        tm = min(tx, ty, tz)
        if tm >= length:
            break
        if tx == tm:
            cx += sx
            tx = _next_crossing(q0[0], dq[0], cx)
        if ty == tm:
            cy += sy
            ty = _next_crossing(q0[1], dq[1], cy)
        if tz == tm:
            cz += sz
            tz = _next_crossing(q0[2], dq[2], cz)
        if cx < 0 or cx >= n[0] or cy < 0 or cy >= n[1] or cz < 0 or cz >= n[2]:
            break
    return k


@nb.njit(cache=True, parallel=True)
def _count_visits(q0s, dqs, lengths, n):
    m = len(lengths)
    out = np.empty(m, dtype=np.int64)
    dummy = np.empty(0, dtype=np.int64)
    for i in nb.prange(m):
        out[i] = _dda(q0s[i], dqs[i], lengths[i], n, dummy, False)
    return out


@nb.njit(cache=True, parallel=True)
def _fill_visits(q0s, dqs, lengths, n, offsets, out):
    for i in nb.prange(len(lengths)):
        _dda(q0s[i], dqs[i], lengths[i], n, out[offsets[i]:offsets[i + 1]], True)


@nb.njit(cache=True, parallel=True)
def _accumulate(q0s, dqs, lengths, n, n_chunks):
    m = len(lengths)
    size = n[0] * n[1] * n[2]
    partial = np.zeros((n_chunks, size), dtype=np.uint32)
    cap = n[0] + n[1] + n[2] + 3
    for c in nb.prange(n_chunks):
        buf = np.empty(cap, dtype=np.int64)
        row = partial[c]
        for i in range(c * m // n_chunks, (c + 1) * m // n_chunks):
            k = _dda(q0s[i], dqs[i], lengths[i], n, buf, True)
            for j in range(k):
                row[buf[j]] += 1
    total = np.zeros(size, dtype=np.uint32)
    for c in range(n_chunks):
        total += partial[c]
    return total


def _voxel_coords(grid: GridSpec, starts, dirs):
    starts = np.ascontiguousarray(np.asarray(starts, dtype=np.float64).reshape(-1, 3))
    dirs = np.ascontiguousarray(np.asarray(dirs, dtype=np.float64).reshape(-1, 3))
    q0 = (starts - grid.lower) / grid.resolution
    dq = dirs / grid.resolution
    return q0, dq, np.asarray(grid.counts, dtype=np.int64)


def _check_inside(grid: GridSpec, points, what: str) -> None:
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    bad = np.any((p < grid.lower - BOX_TOL) | (p > grid.upper + BOX_TOL), axis=1)
    if bad.any():
        i = int(np.argmax(bad))
        raise InputError(f"{what} {i}: endpoint {p[i].tolist()} outside grid box")


def traverse(segment, grid: GridSpec, as_flat: bool = False) -> np.ndarray:
    """Voxels crossed by ``segment = (start, end)`` with positive length, in order.

    Returns ``(k, 3)`` integer cell coordinates, or flat indices with ``as_flat``.
    """
    start, end = (np.asarray(p, dtype=np.float64) for p in segment)
    _check_inside(grid, np.stack([start, end]), "segment")
    q0, dq, n = _voxel_coords(grid, start, end - start)
    k = _dda(q0[0], dq[0], 1.0, n, np.empty(0, dtype=np.int64), False)
    out = np.empty(k, dtype=np.int64)
    _dda(q0[0], dq[0], 1.0, n, out, True)
    return out if as_flat else grid.unravel(out)


def traverse_beams(beams: BeamSet, grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Flat voxel indices of every segment as a CSR pair ``(offsets, indices)``."""
    _check_segments(beams, grid)
    q0, dq, n = _voxel_coords(grid, beams.starts, beams.directions)
    lengths = np.ascontiguousarray(beams.lengths, dtype=np.float64)
    sizes = _count_visits(q0, dq, lengths, n)
    offsets = np.zeros(len(sizes) + 1, dtype=np.int64)
    np.cumsum(sizes, out=offsets[1:])
    indices = np.empty(offsets[-1], dtype=np.int64)
    _fill_visits(q0, dq, lengths, n, offsets, indices)
    return offsets, indices


def _check_segments(beams: BeamSet, grid: GridSpec) -> None:
    _check_inside(grid, beams.starts, "segment")
    _check_inside(grid, beams.ends, "segment")


def hit_counts(beams: BeamSet, grid: GridSpec) -> HitCountGrid:
    """Number of segments crossing each voxel; each segment adds at most 1 per voxel."""
    _check_segments(beams, grid)
    q0, dq, n = _voxel_coords(grid, beams.starts, beams.directions)
    lengths = np.ascontiguousarray(beams.lengths, dtype=np.float64)
    n_chunks = max(1, min(nb.get_num_threads(), len(lengths)))
    counts = _accumulate(q0, dq, lengths, n, n_chunks)
    return HitCountGrid(grid, counts)
