"""Static occluder geometry and nearest-hit ray queries through a BVH."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numba as nb
import numpy as np

from .exceptions import InputError

RAY_EPSILON = 1e-6
UNIT_TOL = 1e-9

KIND_AAB = 0
KIND_OBB = 1
KIND_CYLINDER = 2
KIND_TRIANGLE = 3

_LEAF_SIZE = 4
_STACK_SIZE = 128


@dataclass(frozen=True)
class AxisAlignedBox:
    min: tuple[float, float, float]
    max: tuple[float, float, float]
    kind = "aab"

    def validate(self):
        lo, hi = np.asarray(self.min, float), np.asarray(self.max, float)
        if lo.shape != (3,) or hi.shape != (3,) or not np.all(lo < hi):
            raise InputError(f"aab requires min < max componentwise, got {self.min} / {self.max}")

    def to_dict(self):
        return {"kind": "aab", "min": list(self.min), "max": list(self.max)}


@dataclass(frozen=True)
class OrientedBox:
    center: tuple[float, float, float]
    half_extents: tuple[float, float, float]
    yaw: float = 0.0
    kind = "obb"

    def validate(self):
        h = np.asarray(self.half_extents, float)
        if np.asarray(self.center, float).shape != (3,) or h.shape != (3,) or not np.all(h > 0):
            raise InputError(f"obb half extents must be positive, got {self.half_extents}")

    def to_dict(self):
        return {"kind": "obb", "center": list(self.center), "half_extents": list(self.half_extents), "yaw": self.yaw}


@dataclass(frozen=True)
class Cylinder:
    """Vertical cylinder standing on ``base`` (center of the bottom disc)."""

    base: tuple[float, float, float]
    radius: float
    height: float
    kind = "cylinder"

    def validate(self):
        if np.asarray(self.base, float).shape != (3,):
            raise InputError("cylinder base must be a 3-vector")
        if not self.radius > 0 or not self.height > 0:
            raise InputError(f"cylinder radius and height must be positive, got r={self.radius} h={self.height}")

    def to_dict(self):
        return {"kind": "cylinder", "base": list(self.base), "radius": self.radius, "height": self.height}


@dataclass(frozen=True)
class GroundPlane:
    z: float = 0.0
    kind = "plane"

    def validate(self):
        if not math.isfinite(self.z):
            raise InputError("plane height must be finite")

    def to_dict(self):
        return {"kind": "plane", "z": self.z}


ScenePrimitive = AxisAlignedBox | OrientedBox | Cylinder | GroundPlane


@dataclass(frozen=True, eq=False)
class SceneMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    name: str = ""

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", f)

    def validated(self) -> "SceneMesh":
        """Check indices and drop zero-area triangles with a warning."""
        v, f = self.vertices, self.triangles
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise InputError(f"mesh {self.name!r}: triangle index out of range for {len(v)} vertices")
        if not f.size:
            return self
        a, b, c = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
        area2 = np.linalg.norm(np.cross(b - a, c - a), axis=1)
        keep = area2 > 0
        if not keep.all():
            warnings.warn(f"mesh {self.name!r}: dropped {int((~keep).sum())} degenerate triangles", stacklevel=2)
        return SceneMesh(v, f[keep], self.name)


@dataclass(frozen=True, eq=False)
class _Bvh:
    lo: np.ndarray
    hi: np.ndarray
    left: np.ndarray
    right: np.ndarray
    start: np.ndarray
    count: np.ndarray
    order: np.ndarray


@dataclass(frozen=True, eq=False)
class Scene:
    primitives: tuple = ()
    meshes: tuple = ()
    kinds: np.ndarray = field(repr=False, default=None)
    params: np.ndarray = field(repr=False, default=None)
    planes: np.ndarray = field(repr=False, default=None)
    bvh: _Bvh = field(repr=False, default=None)

    @property
    def element_count(self) -> int:
        return len(self.kinds) + len(self.planes)

    def raycast(self, origin, direction, max_range: float) -> float | None:
        """Distance to the first surface hit in (1e-6, max_range], or None."""
        o = np.asarray(origin, dtype=np.float64).reshape(3)
        d = np.asarray(direction, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(d) - 1.0) > UNIT_TOL:
            raise InputError(f"ray direction must be unit length, |d| = {np.linalg.norm(d)!r}")
        if not max_range > 0:
            raise InputError("max_range must be positive")
        t = _nearest_bvh(o, d, RAY_EPSILON, float(max_range), *self._kernel_args())
        return None if math.isinf(t) else float(t)

    def raycast_many(self, origins, directions, max_range: float, exhaustive: bool = False) -> np.ndarray:
        """Vectorized first-hit distances; ``inf`` marks no hit.

        ``origins`` may be a single point shared by all rays.
        """
        d = np.ascontiguousarray(np.asarray(directions, dtype=np.float64).reshape(-1, 3))
        o = np.asarray(origins, dtype=np.float64)
        o = np.ascontiguousarray(np.broadcast_to(o.reshape(-1, 3), d.shape))
        norms = np.linalg.norm(d, axis=1)
        if d.size and np.max(np.abs(norms - 1.0)) > UNIT_TOL:
            raise InputError("ray directions must be unit length")
        if not max_range > 0:
            raise InputError("max_range must be positive")
        fn = _cast_exhaustive if exhaustive else _cast_bvh
        return fn(o, d, RAY_EPSILON, float(max_range), *self._kernel_args())

    def _kernel_args(self):
        b = self.bvh
        return (self.kinds, self.params, self.planes, b.lo, b.hi, b.left, b.right, b.start, b.count, b.order)


def build_scene(primitives: Sequence = (), meshes: Sequence[SceneMesh] = ()) -> Scene:
    primitives = tuple(primitives)
    kinds, rows, planes = [], [], []
    for i, prim in enumerate(primitives):
        try:
            prim.validate()
        except InputError as exc:
            raise InputError(f"primitive {i}: {exc}") from None
        if isinstance(prim, GroundPlane):
            planes.append(float(prim.z))
        elif isinstance(prim, AxisAlignedBox):
            kinds.append(KIND_AAB)
            rows.append([*prim.min, *prim.max, 0, 0, 0])
        elif isinstance(prim, OrientedBox):
            kinds.append(KIND_OBB)
            rows.append([*prim.center, *prim.half_extents, math.cos(prim.yaw), math.sin(prim.yaw), 0])
        elif isinstance(prim, Cylinder):
            kinds.append(KIND_CYLINDER)
            rows.append([*prim.base, prim.radius, prim.height, 0, 0, 0, 0])
        else:
            raise InputError(f"primitive {i}: unsupported type {type(prim).__name__}")
    checked = []
    for m in meshes:
        m = m.validated()
        checked.append(m)
        tri = m.vertices[m.triangles].reshape(-1, 9)
        kinds.extend([KIND_TRIANGLE] * len(tri))
        rows.extend(tri.tolist())
    kinds_arr = np.asarray(kinds, dtype=np.int64)
    params = np.asarray(rows, dtype=np.float64).reshape(-1, 9)
    return Scene(
        primitives=primitives,
        meshes=tuple(checked),
        kinds=kinds_arr,
        params=params,
        planes=np.asarray(planes, dtype=np.float64),
        bvh=_build_bvh(_element_bounds(kinds_arr, params)),
    )


def _element_bounds(kinds: np.ndarray, params: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = len(kinds)
    lo = np.empty((n, 3))
    hi = np.empty((n, 3))
    for k in range(n):
        p = params[k]
        kind = kinds[k]
        if kind == KIND_AAB:
            lo[k], hi[k] = p[0:3], p[3:6]
        elif kind == KIND_OBB:
            c, h, cs, sn = p[0:3], p[3:6], abs(p[6]), abs(p[7])
            ext = np.array([cs * h[0] + sn * h[1], sn * h[0] + cs * h[1], h[2]])
            lo[k], hi[k] = c - ext, c + ext
        elif kind == KIND_CYLINDER:
            r, h = p[3], p[4]
            lo[k] = p[0:3] - np.array([r, r, 0.0])
            hi[k] = p[0:3] + np.array([r, r, h])
        else:
            tri = p.reshape(3, 3)
            lo[k], hi[k] = tri.min(axis=0), tri.max(axis=0)
    return lo, hi


def _build_bvh(bounds: tuple[np.ndarray, np.ndarray]) -> _Bvh:
    """Median-split BVH; node boxes are padded so culling stays conservative."""
    elo, ehi = bounds
    n = len(elo)
    order = np.arange(n, dtype=np.int64)
    nodes_lo, nodes_hi, left, right, start, count = [], [], [], [], [], []
    if n == 0:
        empty = np.zeros((0, 3))
        ints = np.zeros(0, dtype=np.int64)
        return _Bvh(empty, empty, ints, ints, ints, ints, order)
    centroid = (elo + ehi) / 2.0
    scale = 1.0 + float(np.max(np.abs(np.concatenate([elo, ehi]))))
    pad = 1e-9 * scale

    def new_node(s, e):
        idx = order[s:e]
        nodes_lo.append(elo[idx].min(axis=0) - pad)
        nodes_hi.append(ehi[idx].max(axis=0) + pad)
        left.append(-1)
        right.append(-1)
        start.append(s)
        count.append(e - s)
        return len(left) - 1

    stack = [(new_node(0, n), 0, n)]
    while stack:
        node, s, e = stack.pop()
        if e - s <= _LEAF_SIZE:
            continue
        idx = order[s:e]
        c = centroid[idx]
        axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
        # stable sort on (centroid, element id) keeps the build independent of ties
        perm = np.lexsort((idx, c[:, axis]))
        order[s:e] = idx[perm]
        mid = (s + e) // 2
        a = new_node(s, mid)
        b = new_node(mid, e)
        left[node], right[node] = a, b
        count[node] = 0
        stack.append((b, mid, e))
        stack.append((a, s, mid))
    return _Bvh(
        np.asarray(nodes_lo), np.asarray(nodes_hi),
        np.asarray(left, dtype=np.int64), np.asarray(right, dtype=np.int64),
        np.asarray(start, dtype=np.int64), np.asarray(count, dtype=np.int64), order,
    )


# ---------------------------------------------------------------- kernels

@nb.njit(cache=True, inline="always")
def _slab(o0, o1, o2, d0, d1, d2, lo0, lo1, lo2, hi0, hi1, hi2):
    tn = -np.inf
    tf = np.inf
    o = (o0, o1, o2)
    d = (d0, d1, d2)
    lo = (lo0, lo1, lo2)
    hi = (hi0, hi1, hi2)
    for a in range(3):
        if d[a] == 0.0:
            if o[a] < lo[a] or o[a] > hi[a]:
                return np.inf, -np.inf
        else:
            t1 = (lo[a] - o[a]) / d[a]
            t2 = (hi[a] - o[a]) / d[a]
            if t1 > t2:
                t1, t2 = t2, t1
            if t1 > tn:
                tn = t1
            if t2 < tf:
                tf = t2
    return tn, tf


@nb.njit(cache=True, inline="always")
def _first_surface(tn, tf, tmin):
    if tn > tf:
        return np.inf
    if tn > tmin:
        return tn
    if tf > tmin:
        return tf
    return np.inf


@nb.njit(cache=True)
def _hit_cylinder(o, d, p, tmin):
    cx, cy, z0, r, h = p[0], p[1], p[2], p[3], p[4]
    best = np.inf
    ox = o[0] - cx
    oy = o[1] - cy
    a = d[0] * d[0] + d[1] * d[1]
    if a > 0.0:
        b = 2.0 * (ox * d[0] + oy * d[1])
        c = ox * ox + oy * oy - r * r
        disc = b * b - 4.0 * a * c
        if disc >= 0.0:
            sq = math.sqrt(disc)
            q = -0.5 * (b + sq) if b >= 0.0 else -0.5 * (b - sq)
            roots = (q / a, c / q if q != 0.0 else q / a)
            for t in roots:
                if tmin < t < best:
                    z = o[2] + t * d[2]
                    if z0 <= z <= z0 + h:
                        best = t
    if d[2] != 0.0:
        for zc in (z0, z0 + h):
            t = (zc - o[2]) / d[2]
            if tmin < t < best:
                x = ox + t * d[0]
                y = oy + t * d[1]
                if x * x + y * y <= r * r:
                    best = t
    return best


@nb.njit(cache=True)
def _hit_triangle(o, d, p, tmin):
    # watertight ray/triangle test; points on edges count as hits
    ad0, ad1, ad2 = abs(d[0]), abs(d[1]), abs(d[2])
    kz = 0
    if ad1 > ad0 and ad1 >= ad2:
        kz = 1
    elif ad2 > ad0 and ad2 > ad1:
        kz = 2
    kx = (kz + 1) % 3
    ky = (kx + 1) % 3
    if d[kz] < 0.0:
        kx, ky = ky, kx
    sx = d[kx] / d[kz]
    sy = d[ky] / d[kz]
    sz = 1.0 / d[kz]
    ax = p[kx] - o[kx]
    ay = p[ky] - o[ky]
    az = p[kz] - o[kz]
    bx = p[3 + kx] - o[kx]
    by = p[3 + ky] - o[ky]
    bz = p[3 + kz] - o[kz]
    cx = p[6 + kx] - o[kx]
    cy = p[6 + ky] - o[ky]
    cz = p[6 + kz] - o[kz]
    ax -= sx * az
    ay -= sy * az
    bx -= sx * bz
    by -= sy * bz
    cx -= sx * cz
    cy -= sy * cz
    u = cx * by - cy * bx
    v = ax * cy - ay * cx
    w = bx * ay - by * ax
    if (u < 0.0 or v < 0.0 or w < 0.0) and (u > 0.0 or v > 0.0 or w > 0.0):
        return np.inf
    det = u + v + w
    if det == 0.0:
        return np.inf
    t = (u * sz * az + v * sz * bz + w * sz * cz) / det
    if t > tmin:
        return t
    return np.inf


@nb.njit(cache=True)
def _hit_element(kind, p, o, d, tmin):
    if kind == KIND_AAB:
        tn, tf = _slab(o[0], o[1], o[2], d[0], d[1], d[2], p[0], p[1], p[2], p[3], p[4], p[5])
        return _first_surface(tn, tf, tmin)
    if kind == KIND_OBB:
        cs, sn = p[6], p[7]
        rx = o[0] - p[0]
        ry = o[1] - p[1]
        lx = cs * rx + sn * ry
        ly = -sn * rx + cs * ry
        lz = o[2] - p[2]
        dx = cs * d[0] + sn * d[1]
        dy = -sn * d[0] + cs * d[1]
        tn, tf = _slab(lx, ly, lz, dx, dy, d[2], -p[3], -p[4], -p[5], p[3], p[4], p[5])
        return _first_surface(tn, tf, tmin)
    if kind == KIND_CYLINDER:
        return _hit_cylinder(o, d, p, tmin)
    return _hit_triangle(o, d, p, tmin)


@nb.njit(cache=True)
def _hit_planes(planes, o, d, tmin, best):
    if d[2] != 0.0:
        for z in planes:
            t = (z - o[2]) / d[2]
            if tmin < t < best:
                best = t
    return best


@nb.njit(cache=True)
def _nearest_bvh(o, d, tmin, tmax, kinds, params, planes, lo, hi, left, right, start, count, order):
    best = _hit_planes(planes, o, d, tmin, np.inf)
    if len(left) > 0:
        stack = np.empty(_STACK_SIZE, dtype=np.int64)
        stack[0] = 0
        sp = 1
        while sp > 0:
            sp -= 1
            node = stack[sp]
            tn, tf = _slab(o[0], o[1], o[2], d[0], d[1], d[2],
                           lo[node, 0], lo[node, 1], lo[node, 2], hi[node, 0], hi[node, 1], hi[node, 2])
            if tn > tf or tf < tmin or tn > best:
                continue
            if left[node] < 0:
                for k in range(start[node], start[node] + count[node]):
                    e = order[k]
                    t = _hit_element(kinds[e], params[e], o, d, tmin)
                    if t < best:
                        best = t
            else:
                stack[sp] = right[node]
                stack[sp + 1] = left[node]
                sp += 2
    if best > tmax:
        return np.inf
    return best


@nb.njit(cache=True)
def _nearest_exhaustive(o, d, tmin, tmax, kinds, params, planes):
    best = _hit_planes(planes, o, d, tmin, np.inf)
    for e in range(len(kinds)):
        t = _hit_element(kinds[e], params[e], o, d, tmin)
        if t < best:
            best = t
    if best > tmax:
        return np.inf
    return best


@nb.njit(cache=True, parallel=True)
def _cast_bvh(origins, dirs, tmin, tmax, kinds, params, planes, lo, hi, left, right, start, count, order):
    n = len(dirs)
    out = np.empty(n)
    for i in nb.prange(n):
        out[i] = _nearest_bvh(origins[i], dirs[i], tmin, tmax, kinds, params, planes,
                              lo, hi, left, right, start, count, order)
    return out


@nb.njit(cache=True, parallel=True)
def _cast_exhaustive(origins, dirs, tmin, tmax, kinds, params, planes, lo, hi, left, right, start, count, order):
    n = len(dirs)
    out = np.empty(n)
    for i in nb.prange(n):
        out[i] = _nearest_exhaustive(origins[i], dirs[i], tmin, tmax, kinds, params, planes)
    return out
