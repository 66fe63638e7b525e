import itertools

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def brute_contract(cores, x):
    """Entry of an MPS by summing over every bond index explicitly."""
    ranges = [range(c.shape[2]) for c in cores[:-1]]
    total = 0.0
    for bonds in itertools.product(*ranges):
        idx = (0,) + bonds + (0,)
        term = 1.0
        for k, c in enumerate(cores):
            term = term * c[idx[k], x[k], idx[k + 1]]
        total = total + term
    return total


def configs(n):
    return np.array(list(itertools.product([0, 1], repeat=n)), dtype=np.int64)


def random_cores(rng, n, r, complex_=False):
    ranks = [1] + [min(r, 2**k, 2 ** (n - k)) for k in range(1, n)] + [1]
    cores = []
    for k in range(n):
        c = rng.standard_normal((ranks[k], 2, ranks[k + 1]))
        if complex_:
            c = c + 1j * rng.standard_normal(c.shape)
        cores.append(c)
    return cores


def core_jacobian(cores, i):
    """Dense Jacobian of the flattened tensor with respect to core ``i`` (columns = core entries)."""
    n = len(cores)
    shape = cores[i].shape
    cols = []
    for idx in np.ndindex(shape):
        unit = np.zeros(shape, dtype=np.result_type(*cores))
        unit[idx] = 1.0
        trial = list(cores)
        trial[i] = unit
        out = trial[0].reshape(trial[0].shape[1], -1)
        for c in trial[1:]:
            out = (out @ c.reshape(c.shape[0], -1)).reshape(-1, c.shape[2])
        cols.append(out.reshape(-1))
    return np.column_stack(cols)


def dense_tensor(cores):
    out = cores[0].reshape(cores[0].shape[1], -1)
    for c in cores[1:]:
        out = (out @ c.reshape(c.shape[0], -1)).reshape(-1, c.shape[2])
    return out.reshape(-1)


def bm_grad_q(q, bits, weights):
    """Gradient of ``-sum w log q(x)^2 + log sum q^2`` with respect to the real dense tensor."""
    n = bits.shape[1]
    idx = bits @ (1 << np.arange(n - 1, -1, -1))
    g = 2 * q / np.sum(q * q)
    np.add.at(g, idx, -2 * weights / q[idx])
    return g


# one PASS/FAIL line per acceptance criterion, printed at the end of the session
ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_RESULTS[number] = (bool(passed), detail)
    print(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        passed, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
