"""Entropy-guided visibility scoring (EGVS) for roadside LiDAR placement."""
import numba as _numba

# prefer OpenMP/workqueue over an outdated TBB runtime
_numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

__version__ = "0.1.0"

from .beams import BeamSet, LidarSpec, Placement, beam_directions, clip_segment_to_box, empty_frame_segments, ingest_point_frame, lidar_preset  # noqa: E402
from .estimator import EGVSEstimator  # noqa: E402
from .exceptions import InputError, InvariantError  # noqa: E402
from .grid import EntropyGrid, GridSpec, RoiSpec, Tpog, accumulate_tpog, binary_entropy, discretize, entropy_grid  # noqa: E402
from .metric import EgvsParams, EgvsResult, egvs, egvs_multi, evaluate_placement  # noqa: E402
from .scene import AxisAlignedBox, Cylinder, GroundPlane, OrientedBox, Scene, SceneMesh, build_scene  # noqa: E402
from .search import RankingTable, SweepSpec, greedy_multi, rank_correlation, refine, sweep  # noqa: E402
from .traversal import HitCountGrid, hit_counts, traverse  # noqa: E402
