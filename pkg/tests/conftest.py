import numpy as np
import pytest

from leakprop import envsim


@pytest.fixture(scope="session")
def map1():
    return envsim.builtin_map("map1")


@pytest.fixture(scope="session")
def map2():
    return envsim.builtin_map("map2")


@pytest.fixture(scope="session")
def map3():
    return envsim.builtin_map("map3")


@pytest.fixture(scope="session")
def small_ds1(map1):
    return envsim.generate_dataset(map1, 20, 300, seed=3)


@pytest.fixture(scope="session")
def small_ds2(map2):
    return envsim.generate_dataset(map2, 20, 300, seed=3)


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return np.max(np.abs(a - b) / np.maximum(1e-12, np.maximum(np.abs(a), np.abs(b))))


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance verdicts, one line per criterion."""
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        ok, detail = mod.RESULTS[n]
        terminalreporter.write_line(f"AC{n} {'PASS' if ok else 'FAIL'}: {detail}")
