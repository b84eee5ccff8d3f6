import numpy as np
import pytest

from qvi_extremal.extremal import make_interval_from_bound
from qvi_extremal.fem import assemble_space
from qvi_extremal.obstacles import ConstantObstacle, InverseLaplacianObstacle, ObstacleMap, ThermoformingObstacle


class QuadraticObstacle(ObstacleMap):
    """offset + scale L^{-1} M (u + u^2/2): smooth, increasing for u > -1, genuinely nonlinear."""

    def __init__(self, space, scale, offset):
        super().__init__(space)
        self.scale, self.offset = scale, offset

    def eval(self, u):
        return self.offset + self.scale * self.space.riesz_inverse(self.space.mass @ (u + 0.5 * u * u))

    def deriv(self, u, h):
        return self.scale * self.space.riesz_inverse(self.space.mass @ ((1 + u) * h))


@pytest.fixture(scope="session")
def space64():
    return assemble_space(64)


@pytest.fixture(scope="session")
def il_instance(space64):
    """Nonlocal obstacle 3(-u'')^{-1} + 0.6 with sources 0 <= f <= 12."""
    s = space64
    ob = InverseLaplacianObstacle(s, scale=3.0, offset=0.6)
    F = s.load(np.full(s.n, 12.0))
    f = s.load(np.full(s.n, 8.0))
    return s, ob, f, make_interval_from_bound(s, F, ob)


@pytest.fixture(scope="session")
def quadratic_instance(space64):
    """Nonlinear obstacle with a strictly complementary maximal solution at rho = 0."""
    s = space64
    ob = QuadraticObstacle(s, scale=3.0, offset=0.2)
    F = s.load(np.full(s.n, 8.0))
    f = s.load(np.full(s.n, 4.0))
    return s, ob, f, make_interval_from_bound(s, F, ob)


@pytest.fixture(scope="session")
def vi_instance(space64):
    """Fixed parabolic obstacle: the QVI reduces to a VI."""
    s = space64
    ob = ConstantObstacle(s, 0.2 + 0.8 * (s.x - 0.5) ** 2)
    F = s.load(np.full(s.n, 10.0))
    f = s.load(np.full(s.n, 6.0))
    return s, ob, f, make_interval_from_bound(s, F, ob)


@pytest.fixture(scope="session")
def thermo64():
    s = assemble_space(64)
    ob = ThermoformingObstacle(s)
    F = s.load(np.pi**2 * np.sin(np.pi * s.x))
    return s, ob, F, make_interval_from_bound(s, F, ob)


def pytest_configure(config):
    np.set_printoptions(precision=4, linewidth=120)


# one line per acceptance criterion, printed after the run; a criterion with
# several parts passes only if every part passed
ACCEPTANCE: dict = {}


@pytest.fixture
def criterion():
    def record(number: int, part: str, passed: bool, detail: str) -> bool:
        ACCEPTANCE.setdefault(number, {})[part] = (bool(passed), detail)
        return bool(passed)
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[k]
        ok = all(p for p, _ in parts.values())
        detail = "; ".join(f"{name}: {d}" + ("" if p else " [FAIL]") for name, (p, d) in parts.items())
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  ({detail})")
