import pytest

from egvs.grid import accumulate_tpog, discretize, entropy_grid
from egvs.ingest_io import rasterize_frame
from egvs.scene import AxisAlignedBox, build_scene
from egvs.synth import DEMO_ROI, demo_scene, generate_traffic

# 3 m barrier on the sidewalk just east of the (195, 255, 2) mounting point
OCCLUSION_WALL = AxisAlignedBox((196.0, 245.0, 0.0), (196.3, 265.0, 3.0))

_criteria: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion implemented by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when not in ("setup", "call"):
        return
    n, title = mark.args
    entry = _criteria.setdefault(n, {"title": title, "ok": True, "tests": 0})
    if rep.when == "call":
        entry["tests"] += 1
    if rep.failed:
        entry["ok"] = False


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        e = _criteria[n]
        status = "PASS" if e["ok"] and e["tests"] else "FAIL"
        terminalreporter.write_line(f"criterion {n} [{status}] {e['title']}")


@pytest.fixture(scope="session")
def demo_grid():
    return discretize(DEMO_ROI)


@pytest.fixture(scope="session")
def demo_entropy(demo_grid):
    frames = generate_traffic(0)
    tpog = accumulate_tpog(demo_grid, (rasterize_frame(f.objects, demo_grid) for f in frames))
    return entropy_grid(tpog)


@pytest.fixture(scope="session")
def demo_geometry():
    return demo_scene()


@pytest.fixture(scope="session")
def demo_built(demo_geometry):
    prims, meshes = demo_geometry
    return build_scene(prims, meshes)
