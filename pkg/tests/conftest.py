from __future__ import annotations

import random

import pytest

from vlnharness.dataset import EpisodeSpec, Instruction, Language
from vlnharness.env_graph import ObservationStore, ViewRecord
from vlnharness.synthetic import square_graph


@pytest.fixture
def square():
    return square_graph()


@pytest.fixture
def square_store():
    """Two captions per viewpoint, facing +y (heading 0) and +x (heading pi/2)."""
    import math

    views = {
        vp: (
            ViewRecord(0.0, 0.0, f"a hallway north of {vp}", ("rug",)),
            ViewRecord(math.pi / 2, 0.0, f"a kitchen east of {vp}", ("table", "rug")),
        )
        for vp in "ABCD"
    }
    return ObservationStore(views)


@pytest.fixture
def square_episode():
    return EpisodeSpec(
        path_id=1,
        scan_id="square",
        initial_heading=0.0,
        ground_truth_path=("A", "B", "C"),
        instructions=(Instruction("go right then up", Language.ENGLISH),),
        shortest_distance=10.0,
    )


@pytest.fixture
def rng():
    return random.Random(1234)


# --- acceptance reporting -----------------------------------------------------------

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by this test")


def pytest_runtest_logreport(report):
    info = getattr(report, "criterion", None)
    if info is None:
        return
    number, title = info
    entry = _CRITERIA.setdefault(number, {"title": title, "ok": True, "ran": False})
    if report.when == "call":
        entry["ran"] = True
    if report.failed:
        entry["ok"] = False


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        outcome.get_result().criterion = tuple(marker.args)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        status = "PASS" if entry["ok"] and entry["ran"] else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {status}  {entry['title']}")
