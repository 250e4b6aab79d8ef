"""LiDAR beam patterns and the empty-frame segment set clipped to the ROI."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .exceptions import InputError
from .grid import RoiSpec
from .scene import Scene

MIN_SEGMENT_LENGTH = 1e-9
DEFAULT_MAX_RANGE = 200.0

# Velodyne VLP-32C laser elevation table, degrees, sorted ascending.
VLP32C_ELEVATIONS_DEG = (
    -25.0, -15.639, -11.31, -8.843, -7.254, -6.148, -5.333, -4.667,
    -4.0, -3.667, -3.333, -3.0, -2.667, -2.333, -2.0, -1.667,
    -1.333, -1.0, -0.667, -0.333, 0.0, 0.333, 0.667, 1.0,
    1.333, 1.667, 2.333, 3.333, 4.667, 7.0, 10.333, 15.0,
)


@dataclass(frozen=True)
class LidarSpec:
    """Spinning multi-beam sensor.

    ``elevation_angles=None`` spaces the scan lines uniformly over ``vfov``.
    Angles are in radians.
    """

    scan_lines: int
    horizontal_resolution: float
    vfov: tuple[float, float]
    elevation_angles: Optional[tuple[float, ...]] = None
    max_range: float = DEFAULT_MAX_RANGE
    name: str = "custom"

    def __post_init__(self):
        if int(self.scan_lines) != self.scan_lines or self.scan_lines < 1:
            raise InputError(f"scan_lines must be a positive integer, got {self.scan_lines}")
        psi = float(self.horizontal_resolution)
        if not 0 < psi < 2 * math.pi:
            raise InputError("horizontal resolution must lie in (0, 2*pi)")
        ratio = 2 * math.pi / psi
        if abs(ratio - round(ratio)) > 1e-9:
            raise InputError(f"2*pi / horizontal resolution must be an integer, got {ratio!r}")
        lo, hi = (float(v) for v in self.vfov)
        if not lo <= hi:
            raise InputError("vfov must be (min, max) with min <= max")
        object.__setattr__(self, "vfov", (lo, hi))
        if self.elevation_angles is not None:
            el = tuple(float(a) for a in self.elevation_angles)
            if len(el) != self.scan_lines:
                raise InputError(f"expected {self.scan_lines} elevation angles, got {len(el)}")
            if any(b <= a for a, b in zip(el, el[1:])):
                raise InputError("elevation angles must be strictly increasing")
            if el[0] < lo - 1e-12 or el[-1] > hi + 1e-12:
                raise InputError("elevation angles must lie within the vertical field of view")
            object.__setattr__(self, "elevation_angles", el)
        if not self.max_range > 0:
            raise InputError("max_range must be positive")

    @property
    def azimuth_count(self) -> int:
        return round(2 * math.pi / self.horizontal_resolution)

    @property
    def beam_count(self) -> int:
        return self.scan_lines * self.azimuth_count

    def elevations(self) -> np.ndarray:
        if self.elevation_angles is not None:
            return np.asarray(self.elevation_angles)
        if self.scan_lines == 1:
            return np.array([0.5 * (self.vfov[0] + self.vfov[1])])
        return np.linspace(self.vfov[0], self.vfov[1], self.scan_lines)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "scan_lines": self.scan_lines,
            "horizontal_resolution": self.horizontal_resolution,
            "vfov": list(self.vfov),
            "elevation_angles": None if self.elevation_angles is None else list(self.elevation_angles),
            "max_range": self.max_range,
        }


def lidar_preset(name: str, max_range: float = DEFAULT_MAX_RANGE) -> LidarSpec:
    """``vlp32c`` uses the sensor's elevation table; ``vlp32c-uniform`` spaces
    32 lines evenly over the same +15/-25 degree field of view."""
    vfov = (math.radians(-25.0), math.radians(15.0))
    psi = math.radians(0.2)
    if name == "vlp32c":
        return LidarSpec(32, psi, vfov, tuple(math.radians(a) for a in VLP32C_ELEVATIONS_DEG), max_range, name)
    if name == "vlp32c-uniform":
        return LidarSpec(32, psi, vfov, None, max_range, name)
    raise InputError(f"unknown LiDAR preset {name!r} (choose from: vlp32c, vlp32c-uniform)")


LIDAR_PRESETS = ("vlp32c", "vlp32c-uniform")


@dataclass(frozen=True)
class Placement:
    position: tuple[float, float, float]

    def __post_init__(self):
        pos = tuple(float(v) for v in self.position)
        if len(pos) != 3:
            raise InputError("placement position must be [x, y, z]")
        if not pos[2] > 0:
            raise InputError(f"placement height z must be > 0, got {pos[2]}")
        object.__setattr__(self, "position", pos)

    @property
    def x(self):
        return self.position[0]

    @property
    def y(self):
        return self.position[1]

    @property
    def z(self):
        return self.position[2]

    def to_dict(self):
        return {"x": self.x, "y": self.y, "z": self.z}


@dataclass(frozen=True, eq=False)
class BeamSet:
    """Clipped beam segments of one placement.

    Each segment is ``starts[k] + s * directions[k]`` for ``s`` in
    ``[0, lengths[k]]``; ``beam_ids`` maps it back to the emitted beam.
    """

    placement: Placement
    starts: np.ndarray
    ends: np.ndarray
    directions: np.ndarray
    lengths: np.ndarray
    emitted_count: int
    beam_ids: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.beam_ids is None:
            object.__setattr__(self, "beam_ids", np.arange(len(self.lengths)))

    @property
    def kept_count(self) -> int:
        return len(self.lengths)

    @property
    def segments(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return list(zip(self.starts, self.ends))

    def concat(self, other: "BeamSet") -> "BeamSet":
        return BeamSet(
            self.placement,
            np.concatenate([self.starts, other.starts]),
            np.concatenate([self.ends, other.ends]),
            np.concatenate([self.directions, other.directions]),
            np.concatenate([self.lengths, other.lengths]),
            self.emitted_count + other.emitted_count,
            np.concatenate([self.beam_ids, other.beam_ids + self.emitted_count]),
        )

    @classmethod
    def from_segments(cls, placement: Placement, starts, ends) -> "BeamSet":
        starts = np.asarray(starts, dtype=np.float64).reshape(-1, 3)
        ends = np.asarray(ends, dtype=np.float64).reshape(-1, 3)
        v = ends - starts
        lengths = np.linalg.norm(v, axis=1)
        dirs = np.divide(v, lengths[:, None], out=np.zeros_like(v), where=lengths[:, None] > 0)
        return cls(placement, starts, ends, dirs, lengths, len(starts))


def beam_directions(spec: LidarSpec) -> np.ndarray:
    """Unit vectors ordered azimuth-major: index ``k * L + l`` is azimuth k*psi, elevation l."""
    az = np.arange(spec.azimuth_count) * spec.horizontal_resolution
    el = spec.elevations()
    A, E = np.meshgrid(az, el, indexing="ij")
    ce = np.cos(E)
    d = np.stack([ce * np.cos(A), ce * np.sin(A), np.sin(E)], axis=-1).reshape(-1, 3)
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def clip_rays(origins, directions, s_max, lo, hi) -> tuple[np.ndarray, np.ndarray]:
    """Slab-clip rays ``o + s d``, ``s`` in [0, s_max], to the closed box [lo, hi].

    Returns per-ray (s0, s1); empty intersections have s1 < s0.
    """
    o = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    d = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    s0 = np.zeros(len(d))
    s1 = np.broadcast_to(np.asarray(s_max, dtype=np.float64), (len(d),)).copy()
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    for a in range(3):
        da = d[:, a]
        oa = np.broadcast_to(o[:, a], da.shape)
        flat = da == 0.0
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            t1 = (lo[a] - oa) / da
            t2 = (hi[a] - oa) / da
        tn = np.where(flat, -np.inf, np.minimum(t1, t2))
        tf = np.where(flat, np.inf, np.maximum(t1, t2))
        outside = flat & ((oa < lo[a]) | (oa > hi[a]))
        tf = np.where(outside, -np.inf, tf)
        s0 = np.maximum(s0, tn)
        s1 = np.minimum(s1, tf)
    return s0, s1


def clip_segment_to_box(start, end, box) -> Optional[tuple[np.ndarray, np.ndarray]]:
    lo, hi = (np.asarray(b, dtype=np.float64) for b in box)
    if not np.all(lo < hi):
        raise InputError("box requires min < max")
    p = np.asarray(start, dtype=np.float64)
    v = np.asarray(end, dtype=np.float64) - p
    s0, s1 = clip_rays(p, v, 1.0, lo, hi)
    s0, s1 = float(s0[0]), float(s1[0])
    if s1 < s0 or (s1 - s0) * float(np.linalg.norm(v)) < MIN_SEGMENT_LENGTH:
        return None
    a = np.clip(p + s0 * v, lo, hi)
    b = np.clip(p + s1 * v, lo, hi)
    # endpoints already on the box are returned untouched so clipping is idempotent
    if s0 == 0.0:
        a = p.copy()
    if s1 == 1.0:
        b = p + v
    return a, b


def _clipped_beamset(placement, origins, dirs, s_max, roi: RoiSpec, emitted: int, ids) -> BeamSet:
    lo, hi = roi.box
    s0, s1 = clip_rays(origins, dirs, s_max, lo, hi)
    keep = (s1 - s0) >= MIN_SEGMENT_LENGTH
    o = np.broadcast_to(np.asarray(origins, dtype=np.float64).reshape(-1, 3), dirs.shape)[keep]
    d = dirs[keep]
    starts = np.clip(o + s0[keep, None] * d, lo, hi)
    ends = np.clip(o + s1[keep, None] * d, lo, hi)
    return BeamSet(placement, starts, ends, d, (s1 - s0)[keep], emitted, np.asarray(ids)[keep])


def empty_frame_segments(
    scene: Scene,
    placement: Placement,
    spec: LidarSpec,
    roi: RoiSpec,
    miss_policy: str = "extend",
) -> BeamSet:
    """Cast one revolution against the static scene and clip every beam to the ROI.

    Beams that hit nothing run to ``spec.max_range`` under ``miss_policy="extend"``
    and are discarded under ``"drop"``.
    """
    if miss_policy not in ("extend", "drop"):
        raise InputError(f"miss_policy must be 'extend' or 'drop', got {miss_policy!r}")
    dirs = beam_directions(spec)
    origin = np.asarray(placement.position)
    t = scene.raycast_many(origin, dirs, spec.max_range)
    hit = np.isfinite(t)
    ids = np.arange(len(dirs))
    if miss_policy == "extend":
        s_max = np.where(hit, t, spec.max_range)
    else:
        dirs, s_max, ids = dirs[hit], t[hit], ids[hit]
    return _clipped_beamset(placement, origin, dirs, s_max, roi, spec.beam_count, ids)


def ingest_point_frame(points: Sequence, placement: Placement, roi: RoiSpec) -> BeamSet:
    """Segments from the sensor position to each returned point, clipped to the ROI."""
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    origin = np.asarray(placement.position)
    v = p - origin
    dist = np.linalg.norm(v, axis=1)
    nonzero = dist >= MIN_SEGMENT_LENGTH
    dirs = v[nonzero] / dist[nonzero, None]
    ids = np.flatnonzero(nonzero)
    return _clipped_beamset(placement, origin, dirs, dist[nonzero], roi, len(p), ids)
