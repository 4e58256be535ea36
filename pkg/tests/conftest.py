import numpy as np
import pytest
from hypothesis import settings

from ciea import tensor as T
from ciea.gradcheck import numeric_grad, relative_error

settings.register_profile("ciea", deadline=None, max_examples=100)
settings.load_profile("ciea")


def fd_check(fn, tensors, step=1e-5):
    """Worst relative error of tape gradients against central differences of ``fn(*tensors)``."""
    for t in tensors:
        t.grad = None
    with T.Tape() as tape:
        loss = fn(*tensors)
    tape.backward(loss)
    worst = 0.0
    for t in tensors:
        num = numeric_grad(lambda: float(fn(*tensors).item()), t, step)
        worst = max(worst, relative_error(t.grad, num))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from verdicts import VERDICTS

    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
