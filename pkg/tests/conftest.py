import numpy as np
import pytest

from safem import mesh as M
from safem.problems import square_mesh


@pytest.fixture
def square2():
    """Unit square split by one diagonal."""
    return M.create_initial([[0, 0], [1, 0], [1, 1], [0, 1]], [[0, 1, 2], [0, 2, 3]])


@pytest.fixture
def criss_cross():
    """Unit square split by both diagonals; one interior vertex at the centre."""
    return M.create_initial(*square_mesh())


def perturbed_grid(n=4, seed=0, jitter=0.15):
    """Structured n x n grid with interior vertices moved; a generic test mesh."""
    rng = np.random.default_rng(seed)
    xs = np.linspace(0, 1, n + 1)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    interior = (pts > 0).all(axis=1) & (pts < 1).all(axis=1)
    pts[interior] += rng.uniform(-jitter, jitter, size=(interior.sum(), 2)) / n
    idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)
    tris = []
    for i in range(n):
        for j in range(n):
            a, b, c, d = idx[i, j], idx[i + 1, j], idx[i + 1, j + 1], idx[i, j + 1]
            tris += [[a, b, c], [a, c, d]] if (i + j) % 2 == 0 else [[a, b, d], [b, c, d]]
    return M.create_initial(pts, tris)


# acceptance results, filled by test_acceptance.py and echoed after the run
ACCEPTANCE = {}


def record_acceptance(number, title, ok, detail):
    line = f"A{number:<2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
