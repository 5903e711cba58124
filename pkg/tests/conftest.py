import numpy as np
import pytest

from cvrelay.environment import EnvironmentParams, classify
from cvrelay.gaussian import CovarianceMatrix, beamsplitter_matrix


def random_symplectic(rng: np.random.Generator, n: int) -> np.ndarray:
    """Product of random squeezers, phase rotations and beam splitters."""
    s = np.eye(2 * n)
    for _ in range(3):
        for k in range(n):
            r = rng.uniform(-1.0, 1.0)
            th = rng.uniform(0.0, 2 * np.pi)
            local = np.eye(2 * n)
            c, si = np.cos(th), np.sin(th)
            local[2 * k:2 * k + 2, 2 * k:2 * k + 2] = (
                np.array([[c, -si], [si, c]]) @ np.diag([np.exp(r), np.exp(-r)])
            )
            s = local @ s
        if n > 1:
            i, j = rng.choice(n, 2, replace=False)
            s = beamsplitter_matrix(n, int(i), int(j), rng.uniform(0.05, 0.95)) @ s
    return s


def random_cm(rng: np.random.Generator, n: int, pure: bool = False) -> CovarianceMatrix:
    nu = np.ones(n) if pure else rng.uniform(1.0, 4.0, n)
    s = random_symplectic(rng, n)
    return CovarianceMatrix(s @ np.diag(np.repeat(nu, 2)) @ s.T)


def draw_separable_env(rng, tau=(0.05, 0.99), omega=(1.0, 50.0)) -> EnvironmentParams:
    """Uniform draw from the physical separable set by rejection."""
    while True:
        t = rng.uniform(*tau) if isinstance(tau, tuple) else tau
        om = rng.uniform(*omega) if isinstance(omega, tuple) else omega
        g, gp = rng.uniform(-om, om, 2)
        env = EnvironmentParams(float(t), float(om), float(g), float(gp))
        if classify(env).separable:
            return env


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
