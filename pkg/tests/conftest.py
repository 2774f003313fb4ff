import math

import numpy as np
import pytest

from lidarmos import _kernels
from lidarmos.scan_io import Pose


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q @ np.diag(np.sign(np.diag(r)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def random_pose(rng: np.random.Generator, scale: float = 10.0) -> Pose:
    return Pose.from_rt(random_rotation(rng), rng.uniform(-scale, scale, 3))


def yaw_pose(yaw: float, t=(0.0, 0.0, 0.0)) -> Pose:
    c, s = math.cos(yaw), math.sin(yaw)
    return Pose.from_rt(np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]), t)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=_kernels.available_backends(), ids=lambda m: m.NAME)
def kernel_backend(request, monkeypatch):
    """Run a test once per importable kernel backend."""
    import lidarmos.bev_view as bv
    import lidarmos.range_view as rv

    monkeypatch.setattr(rv, "backend", request.param)
    monkeypatch.setattr(bv, "backend", request.param)
    return request.param


ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
