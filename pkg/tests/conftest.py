import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def shoelace(p):
    """Triangle area from vertex coordinates."""
    (x1, y1), (x2, y2), (x3, y3) = p
    return abs(x1 * (y2 - y3) + x2 * (y3 - y1) + x3 * (y1 - y2)) / 2


def bary_oracle(points, q):
    """Barycentric coordinates by solving the affine-combination system."""
    points = np.asarray(points, float)
    m = points.shape[1]
    A = np.vstack([points.T, np.ones(m + 1)])
    return np.linalg.solve(A, np.append(q, 1.0))


def quality(points):
    """Volume over (longest edge)**m; small values mean a sliver."""
    points = np.asarray(points, float)
    m = points.shape[1]
    vol = abs(np.linalg.det(points[1:] - points[0])) / np.prod(np.arange(1, m + 1))
    d = np.linalg.norm(points[:, None] - points[None], axis=2).max()
    return vol / d**m if d > 0 else 0.0


# one line per acceptance criterion, printed after the test run
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
