import numpy as np
import pytest

_ACCEPTANCE: dict[int, tuple[bool, str]] = {}

from ccr.model import STOCK_ROUTINGS, reference_spec, stock_routing


@pytest.fixture(scope="session")
def spec():
    return reference_spec()


@pytest.fixture(scope="session")
def routings(spec):
    return {name: stock_routing(name, spec) for name in STOCK_ROUTINGS}


def rotation(axis, angle):
    axis = np.asarray(axis, float)
    axis = axis / np.linalg.norm(axis)
    K = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * K @ K


@pytest.fixture(scope="session")
def cosserat_400(spec, routings):
    """Cosserat solves of every stock routing at its 400 g load."""
    from ccr import cosserat
    from ccr.model import build_cable_path

    return {
        name: cosserat.solve([build_cable_path(spec, r)], [r.tension], spec)
        for name, r in routings.items()
    }


@pytest.fixture(scope="session")
def acceptance_log():
    """Record one verdict per acceptance criterion: log(n, ok, detail)."""

    def log(n, ok, detail):
        _ACCEPTANCE[n] = (bool(ok), detail)
        print(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")
        return ok

    return log


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")
