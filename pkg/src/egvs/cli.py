"""``egvs`` command line: tpog, entropy, eval, sweep, greedy, correlate, heatmap, synth.

Settings resolve as defaults < ``--config`` JSON file < command-line flags, and
every command writes ``manifest.json`` echoing the resolved settings, where
each came from, and SHA-256 digests of inputs and outputs.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .beams import LIDAR_PRESETS, LidarSpec, Placement, lidar_preset
from .exceptions import InputError, InvariantError
from .grid import (
    EntropyGrid, GridSpec, RoiSpec, Tpog, accumulate_tpog, binary_entropy, discretize, entropy_grid,
)
from .ingest_io import (
    DEFAULT_CLASSES, header_path, parse_scene, parse_trajectory, rasterize_frame, read_grid, write_grid,
    write_heatmap_csv, write_scene, write_trajectory, z_sum_heatmap,
)
from .metric import EgvsParams, egvs_multi, placement_hits
from .scene import build_scene
from .search import SweepSpec, greedy_multi, rank_correlation, sweep
from .synth import DEMO_PLACEMENTS, DEMO_ROI, demo_scene, generate_traffic

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INTERNAL = 70

ROI_DEFAULTS = {
    "roi_center": list(DEMO_ROI.center),
    "roi_dims": list(DEMO_ROI.dims),
    "resolution": 0.5,
}
LIDAR_DEFAULTS = {"lidar": "vlp32c-uniform", "lidar_file": None, "max_range": 200.0,
                  "gamma": 5, "miss_policy": "extend"}

DEFAULTS = {
    "synth": {"seed": 42, "frames": 400, "vehicles": 50, "scenario": "crossing"},
    "tpog": {"trajectory": None, "classes": sorted(DEFAULT_CLASSES), **ROI_DEFAULTS},
    "entropy": {"tpog": None},
    "eval": {"scene": None, "tpog": None, "at": [list(DEMO_PLACEMENTS[0])], "contrib": False, **LIDAR_DEFAULTS},
    "sweep": {"scene": None, "tpog": None, "x": None, "y": None, "z": None, "budget": 100_000, **LIDAR_DEFAULTS},
    "greedy": {"scene": None, "tpog": None, "k": 2, "candidates": None, "x": None, "y": None, "z": None,
               **LIDAR_DEFAULTS},
    "correlate": {"table": None, "score_column": "egvs", "reference_column": "ap_combined"},
    "heatmap": {"grid": None},
}
PATH_KEYS = {"trajectory", "tpog", "scene", "lidar_file", "candidates", "table", "grid"}


class _Run:
    """Per-invocation bookkeeping for the manifest."""

    def __init__(self, command: str, out: Path, cfg: dict, sources: dict):
        self.command = command
        self.out = out
        self.cfg = cfg
        self.sources = sources
        self.inputs: dict[str, str] = {}
        self.outputs: list[Path] = []

    def rel(self, p) -> str:
        return os.path.relpath(Path(p), self.out).replace(os.sep, "/")

    def input(self, p) -> Path:
        p = Path(p)
        if not p.exists():
            raise InputError(f"input file not found: {p}")
        self.inputs[self.rel(p)] = _sha256(p)
        return p

    def output(self, name: str) -> Path:
        p = self.out / name
        self.outputs.append(p)
        return p

    def write_manifest(self) -> None:
        cfg = {k: (self.rel(v) if k in PATH_KEYS and v is not None else v) for k, v in self.cfg.items()}
        manifest = {
            "tool": "egvs",
            "version": __version__,
            "command": self.command,
            "config": cfg,
            "sources": self.sources,
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": {p.name: _sha256(p) for p in sorted(self.outputs)},
        }
        (self.out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                                encoding="utf-8")


def _sha256(p: Path) -> str:
    return hashlib.sha256(Path(p).read_bytes()).hexdigest()


def _floats(text: str, n: int, what: str) -> list[float]:
    try:
        vals = [float(v) for v in str(text).split(",")]
    except ValueError:
        raise InputError(f"{what}: expected {n} comma-separated numbers, got {text!r}") from None
    if len(vals) != n:
        raise InputError(f"{what}: expected {n} comma-separated numbers, got {text!r}")
    return vals


def _vec(n, what):
    return lambda s: _floats(s, n, what)


def _resolve(command: str, args: argparse.Namespace) -> tuple[dict, dict]:
    cfg = dict(DEFAULTS[command])
    sources = {k: "default" for k in cfg}
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise InputError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise InputError(f"{args.config}: invalid JSON ({exc.msg})") from None
        section = doc.get(command, doc) if isinstance(doc, dict) else None
        if not isinstance(section, dict):
            raise InputError(f"{args.config}: expected a JSON object")
        for k, v in section.items():
            if k in DEFAULTS and isinstance(v, dict):
                continue
            if k not in cfg:
                raise InputError(f"{args.config}: unknown setting {k!r} for '{command}'")
            if k in PATH_KEYS and v is not None:
                v = str(Path(args.config).parent / v)
            cfg[k], sources[k] = v, "config"
    for k in cfg:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k], sources[k] = v, "flag"
    return cfg, sources


def _roi(cfg) -> RoiSpec:
    return RoiSpec(tuple(cfg["roi_center"]), tuple(cfg["roi_dims"]), cfg["resolution"])


def _roi_from_grid(grid: GridSpec) -> RoiSpec:
    dims = np.asarray(grid.counts) * grid.resolution
    return RoiSpec(tuple(grid.lower + dims / 2), tuple(dims), grid.resolution)


def _lidar(cfg, run: _Run) -> LidarSpec:
    if cfg["lidar_file"]:
        doc = json.loads(run.input(cfg["lidar_file"]).read_text(encoding="utf-8"))
        try:
            return LidarSpec(
                scan_lines=doc["scan_lines"],
                horizontal_resolution=doc["horizontal_resolution"],
                vfov=tuple(doc["vfov"]),
                elevation_angles=None if doc.get("elevation_angles") is None else tuple(doc["elevation_angles"]),
                max_range=float(cfg["max_range"]),
                name=doc.get("name", "custom"),
            )
        except (KeyError, TypeError) as exc:
            raise InputError(f"{cfg['lidar_file']}: malformed LiDAR description ({exc})") from None
    return lidar_preset(cfg["lidar"], float(cfg["max_range"]))


def _read_grid_input(path, run: _Run):
    payload = run.input(path)
    run.input(header_path(path))
    return read_grid(payload)


def _load_entropy(path, run: _Run) -> EntropyGrid:
    gf = _read_grid_input(path, run)
    if gf.kind == "entropy":
        return EntropyGrid(gf.grid, gf.values)
    if gf.kind != "probability":
        raise InputError(f"{path}: expected a probability or entropy grid, got {gf.kind!r}")
    frames = gf.meta.get("frame_count")
    if frames:
        counts = np.rint(gf.values * frames).astype(np.int64)
        tpog = Tpog(gf.grid, counts, int(frames))
        if not np.array_equal(tpog.prob, gf.values):
            raise InputError(f"{path}: probabilities are not exact ratios over {frames} frames")
        return entropy_grid(tpog)
    return EntropyGrid(gf.grid, binary_entropy(gf.values))


def _load_scene(path, run: _Run):
    prims, meshes = parse_scene(run.input(path))
    base = Path(path).parent
    for name in json.loads(Path(path).read_text(encoding="utf-8")).get("mesh_files", []):
        run.input(base / name)
    return build_scene(prims, meshes)


def _setup_threads(args) -> int:
    import numba

    requested = args.threads if args.threads is not None else os.environ.get("EGVS_THREADS")
    if requested is None:
        return numba.get_num_threads()
    try:
        n = int(requested)
    except ValueError:
        raise InputError(f"thread count must be an integer, got {requested!r}") from None
    if n < 1:
        raise InputError("thread count must be >= 1")
    limit = numba.config.NUMBA_NUM_THREADS
    if n > limit:
        print(f"warning: {n} threads requested, using {limit} (set NUMBA_NUM_THREADS to raise)", file=sys.stderr)
        n = limit
    numba.set_num_threads(n)
    return n


# ---------------------------------------------------------------- commands

def cmd_synth(cfg, run: _Run) -> int:
    frames = generate_traffic(int(cfg["seed"]), int(cfg["frames"]), int(cfg["vehicles"]), cfg["scenario"])
    write_trajectory(run.output("trajectory.jsonl"), frames)
    prims, meshes = demo_scene()
    write_scene(run.output("scene.json"), prims, meshes)
    for m in meshes:
        run.outputs.append(run.out / m.name)
    scenario = {
        "roi_center": list(DEMO_ROI.center),
        "roi_dims": list(DEMO_ROI.dims),
        "resolution": DEMO_ROI.resolution,
        "placements": [list(p) for p in DEMO_PLACEMENTS],
    }
    run.output("scenario.json").write_text(json.dumps(scenario, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {len(frames)} frames and demo scene to {run.out}")
    return EXIT_OK


def cmd_tpog(cfg, run: _Run) -> int:
    if not cfg["trajectory"]:
        raise InputError("--trajectory is required")
    roi = _roi(cfg)
    grid = discretize(roi)
    frames = parse_trajectory(run.input(cfg["trajectory"]))
    classes = cfg["classes"]
    if isinstance(classes, str):
        classes = [c for c in classes.split(",") if c]
    tpog = accumulate_tpog(grid, (rasterize_frame(f.objects, grid, set(classes)) for f in frames))
    write_grid(run.output("tpog.bin"), tpog.prob, grid, "probability", {"frame_count": tpog.frame_count})
    run.outputs.append(run.out / "tpog.bin.json")
    write_heatmap_csv(run.output("tpog_zsum.csv"), z_sum_heatmap(tpog.prob, grid))
    nonzero = int(np.count_nonzero(tpog.occupied_counts))
    if nonzero == 0:
        print("warning: no tracked object overlaps the ROI; the occupancy grid is all zero", file=sys.stderr)
    print(f"T = {tpog.frame_count}")
    print(f"nonzero voxels = {nonzero} of {grid.size}")
    return EXIT_OK


def cmd_entropy(cfg, run: _Run) -> int:
    if not cfg["tpog"]:
        raise InputError("--tpog is required")
    ent = _load_entropy(cfg["tpog"], run)
    write_grid(run.output("entropy.bin"), ent.entropy, ent.grid, "entropy")
    run.outputs.append(run.out / "entropy.bin.json")
    write_heatmap_csv(run.output("entropy_zsum.csv"), z_sum_heatmap(ent.entropy, ent.grid))
    print(f"total entropy = {float(np.sum(ent.entropy)):.6f} bits over {ent.grid.size} voxels")
    return EXIT_OK


def _pipeline_inputs(cfg, run):
    for key in ("scene", "tpog"):
        if not cfg[key]:
            raise InputError(f"--{key} is required")
    scene = _load_scene(cfg["scene"], run)
    ent = _load_entropy(cfg["tpog"], run)
    return scene, ent, _roi_from_grid(ent.grid), _lidar(cfg, run), EgvsParams(int(cfg["gamma"]))


def cmd_eval(cfg, run: _Run) -> int:
    scene, ent, roi, lidar, params = _pipeline_inputs(cfg, run)
    placements = [Placement(tuple(p)) for p in cfg["at"]]
    t0 = time.perf_counter()
    grids, kept, emitted = [], 0, 0
    for p in placements:
        hg, k, e = placement_hits(scene, lidar, p, roi, ent.grid, cfg["miss_policy"])
        grids.append(hg)
        kept += k
        emitted += e
    res = egvs_multi(ent, grids, params, placements, contributions=bool(cfg["contrib"]))
    elapsed = time.perf_counter() - t0
    doc = res.to_dict()
    doc.update({"emitted_beams": emitted, "kept_beams": kept, "lidar": lidar.name, "miss_policy": cfg["miss_policy"]})
    run.output("result.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    if cfg["contrib"]:
        write_grid(run.output("contribution.bin"), res.per_voxel_contribution, ent.grid, "contribution")
        run.outputs.append(run.out / "contribution.bin.json")
    (run.out / "timing.json").write_text(json.dumps({"seconds": elapsed}) + "\n", encoding="utf-8")
    print(f"EGVS = {res.score:.6f}")
    print(f"normalized = {res.normalized_score:.6f}")
    print(f"gamma = {params.gamma}, beams kept {kept} of {emitted}, {elapsed:.3f} s")
    return EXIT_OK


def _lattice(cfg) -> dict:
    out = {}
    for axis in "xyz":
        if cfg[axis] is None:
            raise InputError(f"--{axis} min,max,step is required")
        out[f"{axis}_range"] = tuple(cfg[axis])
    return out


def cmd_sweep(cfg, run: _Run) -> int:
    scene, ent, roi, lidar, params = _pipeline_inputs(cfg, run)
    spec = SweepSpec(**_lattice(cfg), scene=scene, roi=roi, lidar=lidar, params=params,
                     miss_policy=cfg["miss_policy"], budget=int(cfg["budget"]))
    table = sweep(spec, ent)
    table.write_csv(run.output("ranking.csv"))
    table.write_json(run.output("ranking.json"))
    (run.out / "timing.json").write_text(
        json.dumps([{**r.placement.to_dict(), "seconds": r.elapsed} for r in table.rows], indent=2) + "\n",
        encoding="utf-8")
    best = table.rows[0]
    print(f"{len(table)} candidates; best {best.placement.position} EGVS = {best.score:.6f}")
    return EXIT_OK


def _read_candidates(path, run) -> list[Placement]:
    text = run.input(path).read_text(encoding="utf-8")
    rows = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    reader = csv.DictReader(io.StringIO("\n".join(rows)))
    try:
        return [Placement((float(r["x"]), float(r["y"]), float(r["z"]))) for r in reader]
    except (KeyError, TypeError, ValueError):
        raise InputError(f"{path}: candidate rows need numeric x, y, z columns") from None


def cmd_greedy(cfg, run: _Run) -> int:
    scene, ent, roi, lidar, params = _pipeline_inputs(cfg, run)
    if cfg["candidates"]:
        cands = _read_candidates(cfg["candidates"], run)
    else:
        cands = SweepSpec(**_lattice(cfg), scene=scene, roi=roi, lidar=lidar).candidates()
    if not cands:
        raise InputError("candidate list is empty")
    grids = [placement_hits(scene, lidar, p, roi, ent.grid, cfg["miss_policy"])[0] for p in cands]
    res = greedy_multi(int(cfg["k"]), cands, ent, grids, params)
    doc = {
        "k": int(cfg["k"]),
        "gamma": params.gamma,
        "selected": [p.to_dict() for p in res.selected],
        "marginal_gains": res.gains,
        "score": res.score,
        "candidates": len(cands),
    }
    run.output("greedy.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    for step, (p, g) in enumerate(zip(res.selected, res.gains), start=1):
        print(f"step {step}: {p.position} gain {g:.6f}")
    print(f"combined EGVS = {res.score:.6f}")
    return EXIT_OK


def read_table(path) -> dict[str, list[float]]:
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    reader = csv.DictReader(lines)
    cols: dict[str, list[float]] = {name: [] for name in reader.fieldnames or []}
    for lineno, row in enumerate(reader, start=2):
        for k, v in row.items():
            try:
                cols[k].append(float(v))
            except (TypeError, ValueError):
                raise InputError(f"{path}: row {lineno}: column {k!r} is not numeric") from None
    return cols


def reference_table_path() -> Path:
    return Path(str(resources.files("egvs").joinpath("data/placements_ap.csv")))


def cmd_correlate(cfg, run: _Run) -> int:
    path = cfg["table"] or reference_table_path()
    if cfg["table"]:
        run.input(path)
    cols = read_table(path)
    for key in ("score_column", "reference_column"):
        if cfg[key] not in cols:
            raise InputError(f"{path}: no column {cfg[key]!r} (have {', '.join(cols)})")
    stats = rank_correlation(cols[cfg["score_column"]], cols[cfg["reference_column"]])
    doc = {"score_column": cfg["score_column"], "reference_column": cfg["reference_column"], **stats}
    run.output("correlation.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    print(f"n = {stats['n']}  spearman = {stats['spearman']:.5f}  pearson = {stats['pearson']:.5f}")
    return EXIT_OK


def cmd_heatmap(cfg, run: _Run) -> int:
    if not cfg["grid"]:
        raise InputError("--grid is required")
    gf = _read_grid_input(cfg["grid"], run)
    name = Path(cfg["grid"]).name.rsplit(".", 1)[0] + "_zsum.csv"
    heat = z_sum_heatmap(gf.values, gf.grid)
    write_heatmap_csv(run.output(name), heat)
    print(f"{gf.kind} heatmap {heat.shape[0]} x {heat.shape[1]} -> {run.out / name}")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth, "tpog": cmd_tpog, "entropy": cmd_entropy, "eval": cmd_eval,
    "sweep": cmd_sweep, "greedy": cmd_greedy, "correlate": cmd_correlate, "heatmap": cmd_heatmap,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="egvs", description="Entropy-guided visibility scoring for roadside LiDAR.")
    parser.add_argument("--version", action="version", version=f"egvs {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--config", help="JSON file with settings (flags override it)")
        p.add_argument("--threads", type=int, help="worker threads (fallback: EGVS_THREADS)")

    def roi(p):
        p.add_argument("--roi-center", dest="roi_center", type=_vec(3, "--roi-center"), metavar="X,Y,Z")
        p.add_argument("--roi-dims", dest="roi_dims", type=_vec(3, "--roi-dims"), metavar="W,L,H")
        p.add_argument("--resolution", type=float, help="voxel size in meters (default 0.5)")

    def pipeline(p):
        p.add_argument("--scene", help="scene JSON")
        p.add_argument("--tpog", help="probability or entropy grid file")
        p.add_argument("--lidar", choices=LIDAR_PRESETS, help="sensor preset (default vlp32c-uniform)")
        p.add_argument("--lidar-file", dest="lidar_file", help="JSON LiDAR description (radians)")
        p.add_argument("--max-range", dest="max_range", type=float)
        p.add_argument("--gamma", type=int, help="per-voxel hit cap (default 5)")
        p.add_argument("--miss-policy", dest="miss_policy", choices=("extend", "drop"))

    def lattice(p):
        for axis in "xyz":
            p.add_argument(f"--{axis}", type=_vec(3, f"--{axis}"), metavar="MIN,MAX,STEP")

    p = sub.add_parser("synth", help="generate a seeded demo scenario")
    common(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--vehicles", type=int)
    p.add_argument("--scenario", choices=("straight", "crossing"))

    p = sub.add_parser("tpog", help="build the traffic occupancy grid from a trajectory log")
    common(p)
    roi(p)
    p.add_argument("--trajectory")
    p.add_argument("--classes", help="comma-separated object classes (default bus,truck,vehicle)")

    p = sub.add_parser("entropy", help="per-voxel entropy from an occupancy grid")
    common(p)
    p.add_argument("--tpog")

    p = sub.add_parser("eval", help="score one or more placements")
    common(p)
    pipeline(p)
    p.add_argument("--at", action="append", type=_vec(3, "--at"), metavar="X,Y,Z",
                   help="sensor position; repeat for several sensors")
    p.add_argument("--contrib", action="store_const", const=True, help="write per-voxel contributions")

    p = sub.add_parser("sweep", help="rank a lattice of candidate placements")
    common(p)
    pipeline(p)
    lattice(p)
    p.add_argument("--budget", type=int)

    p = sub.add_parser("greedy", help="greedy multi-sensor selection")
    common(p)
    pipeline(p)
    lattice(p)
    p.add_argument("--k", type=int)
    p.add_argument("--candidates", help="CSV with x,y,z columns")

    p = sub.add_parser("correlate", help="rank correlation between two table columns")
    common(p)
    p.add_argument("--table", help="CSV table (default: shipped placement/AP fixture)")
    p.add_argument("--score-column", dest="score_column")
    p.add_argument("--reference-column", dest="reference_column")

    p = sub.add_parser("heatmap", help="z-summed CSV heatmap of a grid file")
    common(p)
    p.add_argument("--grid")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _setup_threads(args)
        cfg, sources = _resolve(args.command, args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        run = _Run(args.command, out, cfg, sources)
        code = COMMANDS[args.command](cfg, run)
        run.write_manifest()
        return code
    except (InputError, OSError) as exc:
        print(f"egvs {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (InvariantError, AssertionError) as exc:
        print(f"egvs {args.command}: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
