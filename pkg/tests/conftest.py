import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from lurk_vecchia._backend import available_backends  # noqa: E402
from lurk_vecchia.geometry import CovParams  # noqa: E402


def random_coords(rng, n, span_s=100.0, span_t=50.0):
    return np.column_stack([rng.uniform(0, span_s, n), rng.uniform(0, span_s, n),
                            rng.uniform(0, span_t, n)])


def random_theta(rng):
    return CovParams(rng.uniform(0.5, 2.0), rng.uniform(20, 80), rng.uniform(10, 40),
                     rng.uniform(0.2, 1.0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=sorted(available_backends()))
def backend(request, monkeypatch):
    """Run a test once per importable kernel backend."""
    from lurk_vecchia import penalty, sparse_core
    K = available_backends()[request.param]
    monkeypatch.setattr(sparse_core, "kernels", K)
    monkeypatch.setattr(penalty, "kernels", K)
    return request.param


_ACCEPTANCE = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line; it is echoed now and in the terminal summary."""
    def _record(label, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} {label}: {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        assert ok, line
    return _record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
