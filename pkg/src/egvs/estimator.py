"""scikit-learn style front end: fit on traffic, score placements."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .beams import LidarSpec, Placement, lidar_preset
from .exceptions import InputError
from .grid import RoiSpec, accumulate_tpog, discretize, entropy_grid
from .ingest_io import TrajectoryFrame, rasterize_frame
from .metric import EgvsParams, EgvsResult, evaluate_placement
from .scene import Scene, build_scene
from .search import RankingRow, RankingTable


class EGVSEstimator(TransformerMixin, BaseEstimator):
    """Learns a traffic entropy grid from trajectory frames and scores LiDAR placements.

    ``fit`` accepts either :class:`TrajectoryFrame` objects or, per frame, an
    iterable of occupied flat voxel indices. ``predict`` maps an ``(n, 3)``
    array of sensor positions to EGVS scores; ``transform`` returns
    ``[score, normalized_score]`` columns.

    ``scene`` may be a built :class:`Scene`, a ``(primitives, meshes)`` pair,
    or ``None`` for an empty scene.
    """

    def __init__(
        self,
        roi_center=(200.0, 250.0, 2.5),
        roi_dims=(50.0, 100.0, 5.0),
        resolution=0.5,
        lidar="vlp32c-uniform",
        gamma=5,
        miss_policy="extend",
        class_filter=("bus", "truck", "vehicle"),
        scene=None,
    ):
        self.roi_center = roi_center
        self.roi_dims = roi_dims
        self.resolution = resolution
        self.lidar = lidar
        self.gamma = gamma
        self.miss_policy = miss_policy
        self.class_filter = class_filter
        self.scene = scene

    def _resolve(self):
        roi = RoiSpec(tuple(self.roi_center), tuple(self.roi_dims), self.resolution)
        lidar = self.lidar if isinstance(self.lidar, LidarSpec) else lidar_preset(self.lidar)
        if self.scene is None:
            scene = build_scene()
        elif isinstance(self.scene, Scene):
            scene = self.scene
        else:
            prims, meshes = self.scene
            scene = build_scene(prims, meshes)
        return roi, lidar, scene

    def fit(self, X, y=None):
        roi, lidar, scene = self._resolve()
        grid = discretize(roi)
        filt = None if self.class_filter is None else set(self.class_filter)
        frames = (
            rasterize_frame(f.objects, grid, filt) if isinstance(f, TrajectoryFrame) else f
            for f in X
        )
        self.roi_ = roi
        self.lidar_ = lidar
        self.scene_ = scene
        self.params_ = EgvsParams(self.gamma)
        self.grid_ = grid
        self.tpog_ = accumulate_tpog(grid, frames)
        self.entropy_ = entropy_grid(self.tpog_)
        self.n_features_in_ = 3
        return self

    def evaluate(self, placement, contributions: bool = False) -> EgvsResult:
        check_is_fitted(self, "entropy_")
        if not isinstance(placement, Placement):
            placement = Placement(tuple(placement))
        return evaluate_placement(self.scene_, self.entropy_, self.lidar_, placement, self.roi_,
                                  self.params_, self.miss_policy, contributions)

    def _positions(self, X) -> np.ndarray:
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != 3:
            raise InputError(f"expected (n, 3) positions, got shape {X.shape}")
        return X

    def predict(self, X) -> np.ndarray:
        return self.transform(X)[:, 0]

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "entropy_")
        out = []
        for row in self._positions(X):
            r = self.evaluate(row)
            out.append((r.score, r.normalized_score))
        return np.asarray(out, dtype=np.float64).reshape(-1, 2)

    def rank(self, X) -> RankingTable:
        check_is_fitted(self, "entropy_")
        rows = []
        for row in self._positions(X):
            r = self.evaluate(row)
            rows.append(RankingRow(r.placements[0], r.score, r.normalized_score, r.elapsed))
        return RankingTable(rows)
