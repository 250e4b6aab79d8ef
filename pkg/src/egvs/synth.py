"""Seeded synthetic scenarios: lane traffic logs and a demo intersection scene.

All randomness comes from ``numpy.random.Generator(PCG64(seed))``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import InputError
from .grid import RoiSpec
from .ingest_io import TrackedObject, TrajectoryFrame
from .scene import AxisAlignedBox, Cylinder, GroundPlane, OrientedBox, SceneMesh

DEMO_ROI = RoiSpec(center=(200.0, 250.0, 2.5), dims=(50.0, 100.0, 5.0), resolution=0.5)
FRAME_INTERVAL = 0.25

# (length, width, height) per class
CLASS_DIMS = {"vehicle": (4.5, 1.8, 1.5), "truck": (8.0, 2.5, 3.0), "bus": (11.0, 2.5, 3.2)}
CLASS_WEIGHTS = (("vehicle", 0.8), ("truck", 0.1), ("bus", 0.1))


@dataclass(frozen=True)
class Lane:
    start: tuple[float, float]
    heading: float
    length: float


SCENARIOS = {
    "straight": (Lane((200.0, 180.0), math.pi / 2, 140.0),),
    "crossing": (
        Lane((197.0, 180.0), math.pi / 2, 140.0),
        Lane((203.0, 320.0), -math.pi / 2, 140.0),
        Lane((150.0, 247.0), 0.0, 100.0),
        Lane((250.0, 253.0), math.pi, 100.0),
    ),
}


def generate_traffic(seed: int, frames: int = 400, vehicles: int = 50, scenario: str = "crossing",
                     speed: tuple[float, float] = (6.0, 14.0)) -> list[TrajectoryFrame]:
    """Vehicles loop along fixed lanes at constant per-vehicle speeds."""
    if scenario not in SCENARIOS:
        raise InputError(f"unknown scenario {scenario!r} (choose from {sorted(SCENARIOS)})")
    if frames < 1 or vehicles < 0:
        raise InputError("frames must be >= 1 and vehicles >= 0")
    lanes = SCENARIOS[scenario]
    rng = np.random.Generator(np.random.PCG64(seed))
    lane_of = rng.integers(0, len(lanes), size=vehicles)
    offset = rng.uniform(0.0, 1.0, size=vehicles)
    v = rng.uniform(speed[0], speed[1], size=vehicles)
    names, weights = zip(*CLASS_WEIGHTS)
    classes = rng.choice(len(names), size=vehicles, p=np.asarray(weights))
    out = []
    for f in range(frames):
        t = (f + 1) * FRAME_INTERVAL
        objs = []
        for k in range(vehicles):
            lane = lanes[lane_of[k]]
            s = (offset[k] * lane.length + v[k] * t) % lane.length
            cls = names[classes[k]]
            dims = CLASS_DIMS[cls]
            x = lane.start[0] + s * math.cos(lane.heading)
            y = lane.start[1] + s * math.sin(lane.heading)
            objs.append(TrackedObject(f"{cls}-{k}", cls, (round(x, 6), round(y, 6), dims[2] / 2), dims,
                                      round(lane.heading, 12)))
        out.append(TrajectoryFrame(t, tuple(objs)))
    return out


def _box_mesh(lo, hi, name) -> SceneMesh:
    x0, y0, z0 = lo
    x1, y1, z1 = hi
    v = [(x0, y0, z0), (x1, y0, z0), (x1, y1, z0), (x0, y1, z0),
         (x0, y0, z1), (x1, y0, z1), (x1, y1, z1), (x0, y1, z1)]
    f = [(0, 2, 1), (0, 3, 2), (4, 5, 6), (4, 6, 7), (0, 1, 5), (0, 5, 4),
         (1, 2, 6), (1, 6, 5), (2, 3, 7), (2, 7, 6), (3, 0, 4), (3, 4, 7)]
    return SceneMesh(np.asarray(v, float), np.asarray(f), name)


def demo_scene() -> tuple[list, list[SceneMesh]]:
    """Intersection around the demo ROI: ground, corner buildings, poles,
    traffic-light heads, a tree, a low wall and a meshed bus shelter."""
    prims = [
        GroundPlane(0.0),
        AxisAlignedBox((160.0, 262.0, 0.0), (189.0, 330.0, 18.0)),
        AxisAlignedBox((211.0, 262.0, 0.0), (240.0, 330.0, 24.0)),
        AxisAlignedBox((160.0, 170.0, 0.0), (189.0, 238.0, 15.0)),
        AxisAlignedBox((213.0, 170.0, 0.0), (240.0, 236.0, 21.0)),
    ]
    for x, y in ((192.0, 242.0), (208.0, 242.0), (192.0, 259.0), (208.0, 259.0)):
        prims.append(Cylinder((x, y, 0.0), 0.15, 6.0))
    prims += [
        OrientedBox((196.5, 259.0, 4.6), (0.2, 0.5, 0.4), 0.0),
        OrientedBox((203.5, 241.5, 4.6), (0.2, 0.5, 0.4), 0.0),
        Cylinder((209.5, 270.0, 0.0), 0.3, 3.0),
        OrientedBox((209.5, 270.0, 4.0), (1.8, 1.8, 1.1), 0.4),
        AxisAlignedBox((190.5, 280.0, 0.0), (190.8, 295.0, 2.5)),
    ]
    meshes = [_box_mesh((189.5, 225.0, 0.0), (193.0, 226.5, 2.6), "shelter.mesh")]
    return prims, meshes


DEMO_PLACEMENTS = ((195.0, 255.0, 2.0), (200.0, 255.0, 2.0), (220.0, 260.0, 2.0), (200.0, 255.0, 3.0))
