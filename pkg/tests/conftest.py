import numpy as np
import pytest

from igafemu.catalog import build_problem
from igafemu.fe import BeamModel
from igafemu.material import MaterialField, MaterialMesh


def nodal(fn, n_el, order=1, name="q"):
    mesh = MaterialMesh.uniform(n_el, order)
    return MaterialField(mesh, fn(mesh.nodes), name=name)


@pytest.fixture
def arc_model():
    """Coarse arc with nodal EA, EI and density fields."""
    ea = nodal(lambda x: 100 * (1.5 - 0.5 * x), 4, name="ea")
    ei = nodal(lambda x: 1e-3 * (2 + np.sin(3 * x)), 4, name="ei")
    rho = nodal(lambda x: 1e-5 * (1 + x), 4, name="rho")
    return BeamModel(build_problem("arc", "pressure", 8, ea=ea, ei=ei, rho=rho))


def central_diff(fn, x, h):
    """Column-wise central differences of a vector function."""
    x = np.asarray(x, float)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h[i] if np.ndim(h) else h
        cols.append((np.asarray(fn(x + e)) - np.asarray(fn(x - e))) / (2 * e[i]))
    return np.stack(cols, axis=-1)


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def report(number, label: str, ok: bool, detail: str = ""):
    ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {label}"
                            + (f" | {detail}" if detail else ""))
    assert ok, f"criterion {number} ({label}) failed: {detail}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
