import numpy as np
import pytest

from driftlab.network import Network


def central_difference(f, params, h=1e-5):
    """Numerical gradient of scalar ``f(params)`` by central differences."""
    grads = []
    for block in params:
        g = np.zeros_like(block)
        it = np.nditer(block, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = block[i]
            block[i] = old + h
            up = f(params)
            block[i] = old - h
            down = f(params)
            block[i] = old
            g[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def max_rel_error(analytic, numeric, floor=1e-8):
    """Worst relative error; entries with |analytic| < floor are compared absolutely."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        a, n = np.ravel(a), np.ravel(n)
        small = np.abs(a) < floor
        if small.any():
            worst = max(worst, float(np.max(np.abs(a[small] - n[small]))))
        big = ~small
        if big.any():
            rel = np.abs(a[big] - n[big]) / np.maximum(np.abs(a[big]), np.abs(n[big]))
            worst = max(worst, float(rel.max()))
    return worst


@pytest.fixture
def tiny_net():
    return Network.create([5, 4, 3], seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion that ran."""
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
