import numpy as np
import pytest

from netlineq.graph import Digraph, balance_by_head_scaling, ring
from netlineq.linproblem import NetworkProblem, generate_problem


def random_digraph(rng, n, density=0.4, wmax=3.0):
    """Strongly connected random digraph: a random Hamiltonian cycle plus chords."""
    w = np.zeros((n, n))
    perm = rng.permutation(n)
    for k in range(n):
        w[perm[k], perm[(k + 1) % n]] = rng.uniform(0.5, wmax)
    extra = (rng.random((n, n)) < density) & (w == 0)
    np.fill_diagonal(extra, False)
    w[extra] = rng.uniform(0.5, wmax, size=extra.sum())
    return Digraph(w)


def random_balanced(rng, n):
    return balance_by_head_scaling(random_digraph(rng, n)).scaled(n)


def two_node():
    """a -> b weight 1, b -> a weight 2."""
    return Digraph([[0.0, 1.0], [2.0, 0.0]])


def mutual_pair():
    return Digraph([[0.0, 1.0], [1.0, 0.0]])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def ring10():
    return ring(10, 10.0)


@pytest.fixture
def problem_10x5():
    return generate_problem(1, 10, 5, shift=1.0)


def singular_problem(rng, n=4, m=3):
    """Agents share a common null vector; A is singular and the null-space condition holds."""
    w = rng.normal(size=m)
    w /= np.linalg.norm(w)
    P = np.eye(m) - np.outer(w, w)
    As = np.stack([rng.uniform(-1, 1, (m, m)) @ P + np.eye(m) @ P for _ in range(n)])
    xs = rng.normal(size=m)
    A = As.sum(axis=0)
    b = A @ xs
    bs = rng.normal(size=(n, m))
    bs[-1] = b - bs[:-1].sum(axis=0)
    return NetworkProblem.from_arrays(As, bs), w


def well_conditioned(seed, eps=0.1):
    """Balanced 3-node graph with near-identity 2x2 blocks."""
    r = np.random.default_rng(seed)
    g = random_balanced(r, 3)
    As = np.eye(2) + eps * r.uniform(-1, 1, (3, 2, 2))
    return NetworkProblem.from_arrays(As, r.normal(size=(3, 2))), g


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
