"""On-disk formats: trajectory logs, scenes, meshes, point frames, grid files, heatmaps.

Trajectory log (JSON lines, one frame per line)::

    {"time": 0.25, "objects": [{"id": "car-3", "class": "vehicle",
      "center": [x, y, z], "dims": [length, width, height], "yaw": 0.1}]}

Mesh file (plain text, zero-based indices)::

    <vertex count> <face count>
    v x y z
    f i j k

Grid file: raw little-endian payload (float64, or uint32 for counts) in
x-fastest order, plus a JSON header stored next to it as ``<payload>.json``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .exceptions import InputError
from .grid import GridSpec
from .scene import AxisAlignedBox, Cylinder, GroundPlane, OrientedBox, SceneMesh

DEFAULT_CLASSES = frozenset({"vehicle", "truck", "bus"})
GRID_KINDS = {"probability": "<f8", "entropy": "<f8", "contribution": "<f8", "count": "<u4"}


@dataclass(frozen=True)
class TrackedObject:
    id: str
    cls: str
    center: tuple[float, float, float]
    dims: tuple[float, float, float]
    yaw: float

    def to_dict(self):
        return {"id": self.id, "class": self.cls, "center": list(self.center), "dims": list(self.dims), "yaw": self.yaw}


@dataclass(frozen=True)
class TrajectoryFrame:
    time: float
    objects: tuple[TrackedObject, ...] = ()

    def to_dict(self):
        return {"time": self.time, "objects": [o.to_dict() for o in self.objects]}


# ------------------------------------------------------------ rasterization

def point_in_obb(points: np.ndarray, obj: TrackedObject) -> np.ndarray:
    """Boolean mask of points inside the yawed box (boundary inclusive)."""
    c = np.asarray(obj.center)
    rel = np.asarray(points, dtype=np.float64) - c
    cs, sn = math.cos(obj.yaw), math.sin(obj.yaw)
    lx = cs * rel[:, 0] + sn * rel[:, 1]
    ly = -sn * rel[:, 0] + cs * rel[:, 1]
    length, width, height = obj.dims
    return (np.abs(lx) <= length / 2) & (np.abs(ly) <= width / 2) & (np.abs(rel[:, 2]) <= height / 2)


def rasterize_frame(objects: Iterable[TrackedObject], grid: GridSpec,
                    class_filter: Iterable[str] | None = DEFAULT_CLASSES) -> np.ndarray:
    """Sorted flat indices of voxels whose center lies inside a kept object.

    ``class_filter=None`` keeps every class.
    """
    keep = None if class_filter is None else frozenset(class_filter)
    n = np.asarray(grid.counts)
    lower, delta = grid.lower, grid.resolution
    found = []
    for obj in objects:
        if keep is not None and obj.cls not in keep:
            continue
        cs, sn = abs(math.cos(obj.yaw)), abs(math.sin(obj.yaw))
        length, width, height = obj.dims
        ext = np.array([cs * length / 2 + sn * width / 2, sn * length / 2 + cs * width / 2, height / 2])
        c = np.asarray(obj.center)
        # candidate block from the footprint's bounding box, padded by one cell
        lo = np.floor((c - ext - lower) / delta - 0.5).astype(np.int64) - 1
        hi = np.ceil((c + ext - lower) / delta - 0.5).astype(np.int64) + 1
        lo = np.maximum(lo, 0)
        hi = np.minimum(hi, n - 1)
        if np.any(hi < lo):
            continue
        ix, iy, iz = (np.arange(lo[a], hi[a] + 1) for a in range(3))
        I, J, K = np.meshgrid(ix, iy, iz, indexing="ij")
        ijk = np.stack([I.ravel(), J.ravel(), K.ravel()], axis=1)
        centers = lower + (ijk + 0.5) * delta
        inside = point_in_obb(centers, obj)
        if inside.any():
            found.append(grid.flat_index(ijk[inside]))
    if not found:
        return np.zeros(0, dtype=np.int64)
    return np.unique(np.concatenate(found))


# ------------------------------------------------------------ trajectories

def _vector(value, name, where):
    if not isinstance(value, (list, tuple)) or len(value) != 3:
        raise InputError(f"{where}: field {name!r} must be a list of 3 numbers")
    try:
        out = tuple(float(v) for v in value)
    except (TypeError, ValueError):
        raise InputError(f"{where}: field {name!r} must be numeric") from None
    if not all(math.isfinite(v) for v in out):
        raise InputError(f"{where}: field {name!r} must be finite")
    return out


def _number(value, name, where):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise InputError(f"{where}: field {name!r} must be a finite number")
    return float(value)


def _parse_object(rec, where) -> TrackedObject:
    if not isinstance(rec, dict):
        raise InputError(f"{where}: object must be a JSON object")
    for key in ("id", "class", "center", "dims", "yaw"):
        if key not in rec:
            raise InputError(f"{where}: missing field {key!r}")
    dims = _vector(rec["dims"], "dims", where)
    if min(dims) <= 0:
        raise InputError(f"{where}: field 'dims' must be positive")
    return TrackedObject(
        id=str(rec["id"]),
        cls=str(rec["class"]),
        center=_vector(rec["center"], "center", where),
        dims=dims,
        yaw=_number(rec["yaw"], "yaw", where),
    )


def parse_trajectory(path) -> list[TrajectoryFrame]:
    frames: list[TrajectoryFrame] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InputError(f"{where}: invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise InputError(f"{where}: frame must be a JSON object")
            for key in ("time", "objects"):
                if key not in rec:
                    raise InputError(f"{where}: missing field {key!r}")
            t = _number(rec["time"], "time", where)
            if not isinstance(rec["objects"], list):
                raise InputError(f"{where}: field 'objects' must be a list")
            objs = tuple(_parse_object(o, f"{where} object {k}") for k, o in enumerate(rec["objects"]))
            if frames and not t > frames[-1].time:
                raise InputError(f"{where}: time {t} not after previous frame time {frames[-1].time}")
            frames.append(TrajectoryFrame(t, objs))
    return frames


def write_trajectory(path, frames: Sequence[TrajectoryFrame]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for f in frames:
            fh.write(json.dumps(f.to_dict(), separators=(",", ":")) + "\n")


# ------------------------------------------------------------ scenes

def parse_mesh(path) -> SceneMesh:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.split("#", 1)[0].strip()
            if s:
                rows.append((lineno, s.split()))
    if not rows:
        raise InputError(f"{path}: empty mesh file")
    lineno, header = rows[0]
    try:
        nv, nf = (int(v) for v in header)
    except ValueError:
        raise InputError(f"{path}:{lineno}: header must be '<vertex count> <face count>'") from None
    verts, faces = [], []
    for lineno, tok in rows[1:]:
        try:
            if tok[0] == "v" and len(tok) == 4:
                verts.append([float(v) for v in tok[1:]])
            elif tok[0] == "f" and len(tok) == 4:
                faces.append([int(v) for v in tok[1:]])
            else:
                raise ValueError
        except ValueError:
            raise InputError(f"{path}:{lineno}: expected 'v x y z' or 'f i j k'") from None
    if len(verts) != nv or len(faces) != nf:
        raise InputError(f"{path}: header declares {nv} vertices / {nf} faces, found {len(verts)} / {len(faces)}")
    f = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if f.size and (f.min() < 0 or f.max() >= nv):
        raise InputError(f"{path}: face index out of range for {nv} vertices")
    return SceneMesh(np.asarray(verts, dtype=np.float64).reshape(-1, 3), f, name=Path(path).name)


def write_mesh(path, mesh: SceneMesh) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{len(mesh.vertices)} {len(mesh.triangles)}\n")
        for v in mesh.vertices:
            fh.write("v " + " ".join(repr(float(x)) for x in v) + "\n")
        for t in mesh.triangles:
            fh.write("f " + " ".join(str(int(i)) for i in t) + "\n")


def primitive_from_dict(rec: dict, index: int):
    where = f"primitive {index}"
    if not isinstance(rec, dict) or "kind" not in rec:
        raise InputError(f"{where}: missing field 'kind'")
    kind = rec["kind"]
    try:
        if kind == "aab":
            prim = AxisAlignedBox(_vector(rec["min"], "min", where), _vector(rec["max"], "max", where))
        elif kind == "obb":
            prim = OrientedBox(_vector(rec["center"], "center", where),
                               _vector(rec["half_extents"], "half_extents", where),
                               _number(rec.get("yaw", 0.0), "yaw", where))
        elif kind == "cylinder":
            prim = Cylinder(_vector(rec["base"], "base", where), _number(rec["radius"], "radius", where),
                            _number(rec["height"], "height", where))
        elif kind == "plane":
            prim = GroundPlane(_number(rec.get("z", 0.0), "z", where))
        else:
            raise InputError(f"{where}: unknown primitive kind {kind!r}")
    except KeyError as exc:
        raise InputError(f"{where}: missing field {exc.args[0]!r}") from None
    try:
        prim.validate()
    except InputError as exc:
        raise InputError(f"{where}: {exc}") from None
    return prim


def parse_scene(path) -> tuple[list, list[SceneMesh]]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc.msg})") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("primitives"), list):
        raise InputError(f"{path}: expected an object with a 'primitives' list")
    prims = [primitive_from_dict(rec, i) for i, rec in enumerate(doc["primitives"])]
    meshes = [parse_mesh(path.parent / name) for name in doc.get("mesh_files", [])]
    return prims, meshes


def write_scene(path, primitives: Sequence, meshes: Sequence[SceneMesh] = ()) -> None:
    path = Path(path)
    names = []
    for k, m in enumerate(meshes):
        name = m.name or f"{path.stem}_mesh{k}.mesh"
        write_mesh(path.parent / name, m)
        names.append(name)
    doc = {"primitives": [p.to_dict() for p in primitives]}
    if names:
        doc["mesh_files"] = names
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


# ------------------------------------------------------------ point frames

def _numeric_rows(path, width):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.split("#", 1)[0].strip()
            if not s:
                continue
            tok = s.replace(",", " ").split()
            if len(tok) != width:
                raise InputError(f"{path}:{lineno}: expected {width} values, got {len(tok)}")
            try:
                rows.append([float(t) for t in tok])
            except ValueError:
                raise InputError(f"{path}:{lineno}: non-numeric token in {s!r}") from None
    return np.asarray(rows, dtype=np.float64).reshape(-1, width)


def parse_pose(path) -> np.ndarray:
    m = _numeric_rows(path, 4)
    if m.shape != (4, 4):
        raise InputError(f"{path}: pose must be 4 rows of 4 numbers")
    return m


def parse_point_frame(path, pose_path=None) -> np.ndarray:
    """Points as an ``(n, 3)`` array, moved into the world frame when a pose is given."""
    pts = _numeric_rows(path, 3)
    if pose_path is not None:
        m = parse_pose(pose_path)
        pts = pts @ m[:3, :3].T + m[:3, 3]
    return pts


def write_point_frame(path, points) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for p in np.asarray(points, dtype=np.float64).reshape(-1, 3):
            fh.write(" ".join(repr(float(v)) for v in p) + "\n")


# ------------------------------------------------------------ grid files

@dataclass(frozen=True, eq=False)
class GridFile:
    grid: GridSpec
    kind: str
    values: np.ndarray
    meta: dict = field(default_factory=dict)


def header_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def write_grid(path, values, grid: GridSpec, kind: str, meta: dict | None = None) -> Path:
    if kind not in GRID_KINDS:
        raise InputError(f"unknown grid kind {kind!r}")
    dtype = np.dtype(GRID_KINDS[kind])
    values = np.asarray(values)
    if values.shape != (grid.size,):
        raise InputError(f"values have shape {values.shape}, grid has {grid.size} voxels")
    if kind == "count" and values.size and (values.min() < 0 or values.max() > np.iinfo(np.uint32).max):
        raise InputError("count values out of uint32 range")
    path = Path(path)
    path.write_bytes(values.astype(dtype).tobytes())
    header = {
        "shape": list(grid.counts),
        "origin": list(grid.origin),
        "resolution": grid.resolution,
        "kind": kind,
        "dtype": dtype.str,
        "order": "x-fastest",
    }
    if meta:
        header["meta"] = meta
    header_path(path).write_text(json.dumps(header, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_grid(path) -> GridFile:
    path = Path(path)
    hp = header_path(path)
    try:
        header = json.loads(hp.read_text(encoding="utf-8"))
        grid = GridSpec(tuple(header["origin"]), tuple(header["shape"]), header["resolution"])
        kind = header["kind"]
    except FileNotFoundError:
        raise InputError(f"{hp}: grid header not found") from None
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise InputError(f"{hp}: malformed grid header ({exc})") from None
    if kind not in GRID_KINDS:
        raise InputError(f"{hp}: unknown grid kind {kind!r}")
    dtype = np.dtype(GRID_KINDS[kind])
    payload = path.read_bytes()
    expected = grid.size * dtype.itemsize
    if len(payload) != expected:
        raise InputError(f"{path}: payload is {len(payload)} bytes, header implies {expected}")
    values = np.frombuffer(payload, dtype=dtype).astype(dtype.newbyteorder("="))
    return GridFile(grid, kind, values, header.get("meta", {}))


# ------------------------------------------------------------ heatmaps

def z_sum_heatmap(values, grid: GridSpec) -> np.ndarray:
    """Column sums along z as an ``(ny, nx)`` array."""
    nx, ny, nz = grid.counts
    v = np.asarray(values, dtype=np.float64).reshape(nz, ny, nx)
    out = np.zeros((ny, nx))
    for iz in range(nz):
        out += v[iz]
    return out


def write_heatmap_csv(path, heat: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in heat:
            fh.write(",".join(format(float(v), ".17g") for v in row) + "\n")


def read_heatmap_csv(path) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        return np.asarray([[float(v) for v in line.split(",")] for line in fh if line.strip()])
