"""Linear systems whose matrix and right-hand side are sums over agents.

Each agent ``i`` holds ``A_i`` (m x m) and ``b_i`` (m,).  The global system
is ``(sum A_i) x = sum b_i``.  Stacked vectors are agent-major: entries
``i*m:(i+1)*m`` belong to agent ``i``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

RANK_RTOL = 1e-10


class ProblemError(ValueError):
    pass


class NoSolutionError(ProblemError):
    """The summed system ``A x = b`` is inconsistent."""


@dataclass(frozen=True, eq=False)
class AgentData:
    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        b = np.array(self.b, dtype=float).reshape(-1)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] != b.shape[0]:
            raise ProblemError(f"agent data shapes inconsistent: A {A.shape}, b {b.shape}")
        A.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)


@dataclass(frozen=True, eq=False)
class NetworkProblem:
    m: int
    agents: tuple

    def __post_init__(self):
        agents = tuple(a if isinstance(a, AgentData) else AgentData(*a) for a in self.agents)
        if len(agents) < 2:
            raise ProblemError("need at least 2 agents")
        for k, a in enumerate(agents):
            if a.A.shape[0] != self.m:
                raise ProblemError(f"agent {k} has dimension {a.A.shape[0]}, expected {self.m}")
        object.__setattr__(self, "agents", agents)

    @classmethod
    def from_arrays(cls, As, bs) -> "NetworkProblem":
        As = np.asarray(As, dtype=float)
        bs = np.asarray(bs, dtype=float)
        return cls(As.shape[1], tuple(AgentData(A, b) for A, b in zip(As, bs)))

    @property
    def n(self) -> int:
        return len(self.agents)

    @property
    def A_blocks(self) -> np.ndarray:
        return np.stack([a.A for a in self.agents])

    @property
    def b_blocks(self) -> np.ndarray:
        return np.stack([a.b for a in self.agents])

    def permuted(self, perm) -> "NetworkProblem":
        return NetworkProblem(self.m, tuple(self.agents[k] for k in perm))


@dataclass(frozen=True, eq=False)
class StackedOperators:
    """Dense stacked operators for ``n`` agents of dimension ``m``.

    ``blockA`` is block-diagonal with the ``A_i``, ``onesM = 1_n (x) I_m``,
    ``proj = I - onesM onesM^T / n`` and ``lapKron = L (x) I_m`` for the
    bound n x n Laplacian ``lap``.
    """

    n: int
    m: int
    blockA: np.ndarray
    stackedB: np.ndarray
    onesM: np.ndarray
    proj: np.ndarray
    lapKron: np.ndarray
    lap: np.ndarray


def global_system(p: NetworkProblem) -> tuple[np.ndarray, np.ndarray]:
    return p.A_blocks.sum(axis=0), p.b_blocks.sum(axis=0)


def _svd_rank(M: np.ndarray, tol: float) -> int:
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > tol * s[0]))


def has_solution(p: NetworkProblem, tol: float = RANK_RTOL) -> bool:
    A, b = global_system(p)
    return _svd_rank(A, tol) == _svd_rank(np.column_stack([A, b]), tol)


def null_basis(M: np.ndarray, tol: float = RANK_RTOL) -> np.ndarray:
    """Orthonormal basis (columns) of the numerical null space of ``M``."""
    _, s, vt = np.linalg.svd(M)
    if s[0] == 0:
        return np.eye(M.shape[1])
    rank = int(np.sum(s > tol * s[0]))
    return vt[rank:].T.copy()


def nullspace_condition_holds(p: NetworkProblem, tol: float = RANK_RTOL) -> bool:
    """True iff ``null(A)`` is contained in every ``null(A_i)``."""
    A, _ = global_system(p)
    basis = null_basis(A, tol)
    for w in basis.T:
        for agent in p.agents:
            if np.linalg.norm(agent.A @ w) > tol * np.linalg.norm(agent.A, 2) * np.linalg.norm(w):
                return False
    return True


def objective_f(p: NetworkProblem, x_stacked: np.ndarray) -> float:
    x = np.asarray(x_stacked, dtype=float)
    if x.shape != (p.n * p.m,):
        raise ProblemError(f"expected stacked vector of length {p.n * p.m}, got {x.shape}")
    xs = x.reshape(p.n, p.m)
    r = np.einsum("kij,kj->i", p.A_blocks, xs) - p.b_blocks.sum(axis=0)
    return float(r @ r)


def reference_solution(p: NetworkProblem, x_avg0=None, tol: float = RANK_RTOL) -> np.ndarray:
    """Solution of ``A x = b`` closest to ``x_avg0``.

    The minimum-norm solution plus the projection of ``x_avg0`` on
    ``null(A)``; this is the limit the flows select when each agent's null
    component is conserved.
    """
    if not has_solution(p, tol):
        raise NoSolutionError("sum of agent systems is inconsistent")
    A, b = global_system(p)
    x_mn = np.linalg.pinv(A, rcond=tol) @ b
    if x_avg0 is None:
        return x_mn
    N = null_basis(A, tol)
    return x_mn + N @ (N.T @ np.asarray(x_avg0, dtype=float))


def stack(p: NetworkProblem, L: np.ndarray) -> StackedOperators:
    L = np.asarray(L, dtype=float)
    n, m = p.n, p.m
    if L.shape != (n, n):
        raise ProblemError(f"Laplacian shape {L.shape} does not match {n} agents")
    eye = np.eye(m)
    onesM = np.kron(np.ones((n, 1)), eye)
    return StackedOperators(
        n=n,
        m=m,
        blockA=scipy.linalg.block_diag(*p.A_blocks),
        stackedB=p.b_blocks.reshape(-1).copy(),
        onesM=onesM,
        proj=np.eye(n * m) - onesM @ onesM.T / n,
        lapKron=np.kron(L, eye),
        lap=L.copy(),
    )


def generate_problem(seed: int, n: int, m: int, shift: float = 0.0,
                     max_tries: int = 100) -> NetworkProblem:
    """Draw ``A_i``, ``b_i`` i.i.d. uniform on [-1, 1] from a seeded stream.

    ``shift`` adds ``shift * I`` to every ``A_i``; the summed matrix then
    gains ``n * shift`` on its diagonal, which keeps the slowest flow mode
    away from zero.  Redraws (same stream) until the summed system is
    consistent.
    """
    if n < 2 or m < 1:
        raise ProblemError("need n >= 2 and m >= 1")
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        As = rng.uniform(-1.0, 1.0, size=(n, m, m)) + shift * np.eye(m)
        bs = rng.uniform(-1.0, 1.0, size=(n, m))
        p = NetworkProblem.from_arrays(As, bs)
        if has_solution(p):
            return p
    raise ProblemError(f"no consistent problem after {max_tries} draws")


def problem_from_dict(data: dict) -> NetworkProblem:
    try:
        m = int(data["m"])
        if "generator" in data:
            gen = data["generator"]
            return generate_problem(int(gen["seed"]), int(data["n"]), m, float(gen.get("shift", 0.0)))
        As, bs = [], []
        for a in data["agents"]:
            A = np.asarray(a["A"], dtype=float)
            if A.size != m * m or len(a["b"]) != m:
                raise ProblemError(f"agent data does not match m={m}")
            As.append(A.reshape(m, m))
            bs.append(a["b"])
    except (KeyError, TypeError) as exc:
        raise ProblemError(f"malformed problem object: {exc}") from exc
    return NetworkProblem.from_arrays(As, bs)


def problem_to_dict(p: NetworkProblem) -> dict:
    return {
        "m": p.m,
        "agents": [{"A": a.A.reshape(-1).tolist(), "b": a.b.tolist()} for a in p.agents],
    }
