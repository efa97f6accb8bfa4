import warnings

import pytest

from twolane.kernels import TriMesh, solve_control_kernels, solve_observer_kernels
from twolane.model import KMH, CongestionWarning, ModelParams, compute_steady_state, linearize

# steady state with the tabulated lane values taken verbatim
TABULATED = dict(
    rho_star_fast=80e-3,
    v_star_slow=32.0 * KMH,
    v_star_fast=40.0 * KMH,
    rho_max_slow=240e-3,
    rho_max_fast=150e-3,
)

ACCEPTANCE_LINES = []


def record_line(line):
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def params():
    return ModelParams.defaults()


@pytest.fixture(scope="session")
def ss(params):
    return compute_steady_state(params, 0.18)


@pytest.fixture(scope="session")
def lc(params, ss):
    return linearize(params, ss)


@pytest.fixture(scope="session")
def ss_tab(params):
    return compute_steady_state(params, 0.18, mode="as_given", given=TABULATED)


@pytest.fixture(scope="session")
def lc_tab(params, ss_tab):
    return linearize(params, ss_tab)


@pytest.fixture(scope="session")
def kernel_cache(tmp_path_factory):
    return str(tmp_path_factory.mktemp("kernel-cache"))


@pytest.fixture(scope="session")
def ctrl65(lc, kernel_cache):
    return solve_control_kernels(lc, TriMesh(65, lc.seg_length), cache_dir=kernel_cache)


@pytest.fixture(scope="session")
def obs65(lc, kernel_cache):
    return solve_observer_kernels(lc, TriMesh(65, lc.seg_length), cache_dir=kernel_cache)


@pytest.fixture(scope="session")
def ctrl129(lc, kernel_cache):
    return solve_control_kernels(lc, TriMesh(129, lc.seg_length), cache_dir=kernel_cache)


@pytest.fixture(scope="session")
def obs129(lc, kernel_cache):
    return solve_observer_kernels(lc, TriMesh(129, lc.seg_length), cache_dir=kernel_cache)


@pytest.fixture(autouse=True)
def _quiet_congestion():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CongestionWarning)
        yield
