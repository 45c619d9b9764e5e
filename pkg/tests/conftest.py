import numpy as np
import pytest

from ddrom.fem import ParameterSample
from ddrom.fom import DnConfig
from ddrom.mesh import BoxGeometry
from ddrom.problems import discretize, test1_analog, test2_analog

TOL = 1e-10


@pytest.fixture(scope="session")
def rod_geometry():
    """Unit interval split at 1/2 with Dirichlet ends."""
    return BoxGeometry(lo=(0.0,), hi=(1.0,), interface_coord=0.5, dirichlet_faces=("x-", "x+"))


@pytest.fixture(scope="session")
def square_geometry():
    return BoxGeometry(lo=(0.0, 0.0), hi=(1.0, 1.0), interface_coord=0.5, dirichlet_faces=("x-", "x+"))


@pytest.fixture(scope="session")
def conforming_disc():
    return discretize(test1_analog(n=4, refine=1))


@pytest.fixture(scope="session")
def nonconforming_disc():
    return discretize(test2_analog(n=4, refine=2))


@pytest.fixture
def dn_cfg():
    return DnConfig(omega=0.25, tol_interface=TOL, max_iters=300)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def mu_grid(n, seed=0, sources=False):
    r = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        a, b = r.uniform(1, 10, 2)
        g = r.uniform(0, 15, 2) if sources else (0.0, 0.0)
        out.append(ParameterSample(a, b, *g))
    return out


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one acceptance criterion: ``acceptance(k, name, ok, detail)``."""
    store = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(k, name, ok, detail=""):
        line = f"criterion {k} {name}: {'PASS' if ok else 'FAIL'} ({detail})"
        print(line)
        store.append((k, line))
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
