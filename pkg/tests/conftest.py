import numpy as np
import pytest

from hierdet.environment import Scene
from hierdet.features import ImageRaster
from hierdet.geometry import Box


def pixel_iou(a, b):
    """IoU by counting integer pixels; boxes must have integer corners."""
    x1 = int(max(a[2], b[2])) + 1
    y1 = int(max(a[3], b[3])) + 1
    xs, ys = np.meshgrid(np.arange(x1) + 0.5, np.arange(y1) + 0.5)

    def inside(box):
        return (xs > box[0]) & (xs < box[2]) & (ys > box[1]) & (ys < box[3])

    ia, ib = inside(a), inside(b)
    union = np.count_nonzero(ia | ib)
    return np.count_nonzero(ia & ib) / union


def make_scene(boxes, size=64, value=0.9, scene_id="s"):
    img = np.full((size, size, 1), 0.05)
    for b in boxes:
        img[int(b.y0):int(b.y1), int(b.x0):int(b.x1)] = value
    return Scene(ImageRaster(img), list(boxes), scene_id=scene_id)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def full_box():
    return Box(0, 0, 64, 64)


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """Record one PASS/FAIL line for the acceptance summary; returns ``ok``."""

    def _report(criterion: str, ok: bool, detail: str = "") -> bool:
        _ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'}  {criterion}  {detail}".rstrip())
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
