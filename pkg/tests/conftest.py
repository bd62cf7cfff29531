import numpy as np
import pytest

from vbivector import kernels
from vbivector.stats import GlobalStats, StatsBatch
from vbivector.synth import generate, reference_spec


@pytest.fixture(params=kernels.available_backends())
def kernel_backend(request):
    previous = kernels.use_backend(request.param)
    yield request.param
    kernels.use_backend(previous)


@pytest.fixture(scope="session")
def reference_data():
    return generate(reference_spec(seed=1))


@pytest.fixture(scope="session")
def reference_stats(reference_data):
    return reference_data.stats()


def random_stats(rng, H=10, K=3, d=2, zero_frac=0.2):
    """Small random whitened statistics; some N_ik set to zero (with F = 0)."""
    N = rng.uniform(0.5, 20.0, size=(H, K))
    N[rng.random((H, K)) < zero_frac] = 0.0
    Fbar = rng.normal(size=(H, K, d)) * np.sqrt(N)[:, :, None]
    glob = GlobalStats(rng.uniform(1.0, 50.0, size=K), N.sum(axis=0), H)
    return StatsBatch(N, Fbar, glob)


def random_spd(rng, n, cond=10.0):
    q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    ev = np.exp(rng.uniform(0.0, np.log(cond), size=n))
    a = (q * ev) @ q.T
    return 0.5 * (a + a.T)


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """``criterion(n, title, ok, detail)`` records and prints one verdict line."""

    def record(n, title, ok, detail=""):
        line = f"criterion {n:>2} {'PASS' if ok else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
