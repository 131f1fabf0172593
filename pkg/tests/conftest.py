import numpy as np
import pytest

from cfisac.channel import channel_statistics
from cfisac.moments import estimate_moments
from cfisac.scenario import build_scenario


@pytest.fixture(scope="session")
def default_scenario():
    return build_scenario("paper-default", master_seed=42)


@pytest.fixture(scope="session")
def default_channel_stats(default_scenario):
    return channel_statistics(default_scenario)


@pytest.fixture(scope="session")
def default_moments(default_scenario):
    return estimate_moments(default_scenario, 300)


def small_doc(M=2, N_tx=4, N_rx=1, N_ue=2, L_p=4, **sensing):
    """Config overrides for a reduced scenario on the default area."""
    doc = {"radio": {"antennas_per_ap": M, "num_tx_aps": N_tx, "num_rx_aps": N_rx,
                     "num_ues": N_ue, "pilot_length": L_p}}
    if sensing:
        doc["sensing"] = sensing
    return doc


@pytest.fixture
def small_scenario():
    def make(seed=42, drop=0, **kw):
        return build_scenario(small_doc(**kw), master_seed=seed, drop=drop)
    return make


def random_hermitian_pd(rng, n, shift=1.0):
    A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return A @ A.conj().T + shift * np.eye(n)


@pytest.fixture(scope="session")
def default_runs(default_scenario, default_moments):
    """Allocation results of every mode on the default scenario."""
    from cfisac.kinds import Mode
    from cfisac.optimizer import run_algorithm1
    return {m: run_algorithm1(default_scenario, default_moments, m) for m in Mode}


# --------------------------------------------------------- acceptance summary

_ACCEPTANCE: dict[int, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.rpartition("::")[2]
    if not name.startswith("test_criterion_"):
        return
    number = int(name.split("_")[2])
    if report.when == "call" or report.failed:
        detail = dict(report.user_properties).get("detail", "")
        if report.when == "call" or number not in _ACCEPTANCE:
            _ACCEPTANCE[number] = ("PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        status, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {detail}")
