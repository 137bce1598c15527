import numpy as np
import pytest

from gvt.gradcheck import finite_diff_grad, max_relative_error
from gvt.tensor import Tensor

GRAD_TOL = 1e-4
SEEDS = range(10)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def t64(a, requires_grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=requires_grad)


def grad_error(f, x: np.ndarray) -> float:
    """Analytic gradient of scalar f at x vs central differences, as max relative error."""
    leaf = t64(x, requires_grad=True)
    f(leaf).backward()
    numeric = finite_diff_grad(f, t64(x))
    return max_relative_error(leaf.grad, numeric.data, floor=1e-6)


ACCEPTANCE: list[str] = []


def report(name: str, ok: bool, detail: str) -> None:
    """Record one acceptance line; printed in the terminal summary."""
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    ACCEPTANCE.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
