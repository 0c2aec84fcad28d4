"""Weighted directed graphs and their in-Laplacians.

Edge convention: ``weights[i, j] > 0`` means an edge from node ``i`` to
node ``j``.  The in-Laplacian is ``L = D_in - W`` whose columns sum to zero.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np


class GraphError(ValueError):
    """Invalid graph data."""


class ConnectivityError(GraphError):
    """Raised when an operation needs a strongly connected graph."""


@dataclass(frozen=True, eq=False)
class Digraph:
    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise GraphError(f"weights must be square, got shape {w.shape}")
        if w.shape[0] < 2:
            raise GraphError("a digraph needs at least 2 nodes")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise GraphError("weights must be finite and nonnegative")
        if np.any(np.diag(w) != 0):
            raise GraphError("self-loops are not allowed")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    @property
    def out_degree(self) -> np.ndarray:
        return self.weights.sum(axis=1)

    @property
    def in_degree(self) -> np.ndarray:
        return self.weights.sum(axis=0)

    def edges(self) -> list[tuple[int, int, float]]:
        rows, cols = np.nonzero(self.weights)
        return [(int(i), int(j), float(self.weights[i, j])) for i, j in zip(rows, cols)]

    def scaled(self, c: float) -> "Digraph":
        return Digraph(self.weights * c)

    def permuted(self, perm: Sequence[int]) -> "Digraph":
        """Relabel nodes so that new node ``k`` is old node ``perm[k]``."""
        p = np.asarray(perm)
        return Digraph(self.weights[np.ix_(p, p)])

    def __eq__(self, other):
        if not isinstance(other, Digraph):
            return NotImplemented
        return self.weights.shape == other.weights.shape and bool(
            np.array_equal(self.weights, other.weights)
        )

    def __hash__(self):
        return hash(self.weights.tobytes())

    @classmethod
    def from_edges(cls, n: int, edges) -> "Digraph":
        """Build from ``(src, dst, weight)`` triples; duplicates are rejected."""
        w = np.zeros((n, n))
        seen = set()
        for src, dst, wt in edges:
            src, dst = int(src), int(dst)
            if not (0 <= src < n and 0 <= dst < n):
                raise GraphError(f"edge ({src}, {dst}) out of range for n={n}")
            if (src, dst) in seen:
                raise GraphError(f"duplicate edge ({src}, {dst})")
            if wt <= 0:
                raise GraphError(f"edge ({src}, {dst}) has nonpositive weight {wt}")
            seen.add((src, dst))
            w[src, dst] = wt
        return cls(w)


def ring(n: int, weight: float = 1.0) -> Digraph:
    """Directed ring 0 -> 1 -> ... -> n-1 -> 0."""
    return Digraph.from_edges(n, [(i, (i + 1) % n, weight) for i in range(n)])


def in_laplacian(g: Digraph) -> np.ndarray:
    w = g.weights
    return np.diag(w.sum(axis=0)) - w


def is_strongly_connected(g: Digraph) -> bool:
    adj = g.weights > 0
    n = g.n

    def reaches_all(a):
        seen = np.zeros(n, dtype=bool)
        seen[0] = True
        stack = [0]
        while stack:
            u = stack.pop()
            for v in np.flatnonzero(a[u] & ~seen):
                seen[v] = True
                stack.append(v)
        return bool(seen.all())

    return reaches_all(adj) and reaches_all(adj.T)


def default_balance_tol(g: Digraph) -> float:
    return 1e-9 * max(g.out_degree.max(), g.in_degree.max(), 0.0)


def is_weight_balanced(g: Digraph, tol: float | None = None) -> bool:
    if tol is None:
        tol = default_balance_tol(g)
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    return bool(np.max(np.abs(g.out_degree - g.in_degree)) <= tol)


def positive_null_eigenvector(g: Digraph, tol: float = 1e-10) -> np.ndarray:
    """Positive right null vector of the in-Laplacian, normalized to sum 1."""
    if not is_strongly_connected(g):
        raise ConnectivityError("graph is not strongly connected")
    lap = in_laplacian(g)
    vals, vecs = np.linalg.eig(lap)
    k = int(np.argmin(np.abs(vals)))
    v = np.real(vecs[:, k])
    if v[np.argmax(np.abs(v))] < 0:
        v = -v
    if np.any(v <= 1e-12 * np.max(np.abs(v))):
        raise ConnectivityError("null eigenvector is not strictly positive")
    v = v / v.sum()
    scale = max(np.linalg.norm(lap, 2), 1.0)
    if np.linalg.norm(lap @ v) > tol * scale:
        raise ConnectivityError("null eigenvector residual too large")
    return v


def balance_by_head_scaling(g: Digraph) -> Digraph:
    """Scale every edge ``i -> j`` by ``v[j]`` where ``L v = 0``.

    The resulting in-Laplacian equals ``L @ diag(v)``, which has zero row
    and column sums.
    """
    v = positive_null_eigenvector(g)
    return Digraph(g.weights * v[None, :])


@dataclass(frozen=True)
class GraphSequence:
    """Finite list of graphs with a per-step selection policy.

    ``policy`` is ``"fixed"`` (always ``graphs[index]``) or ``"random"``
    (uniform draw per step from a stream seeded by ``seed``).
    """

    graphs: tuple
    policy: str = "fixed"
    index: int = 0
    seed: int = 0

    def __post_init__(self):
        graphs = tuple(self.graphs)
        if not graphs:
            raise GraphError("graph sequence is empty")
        if len({g.n for g in graphs}) != 1:
            raise GraphError("all graphs in a sequence must have the same node count")
        if self.policy not in ("fixed", "random"):
            raise GraphError(f"unknown switching policy {self.policy!r}")
        if self.policy == "fixed" and not 0 <= self.index < len(graphs):
            raise GraphError(f"fixed index {self.index} out of range")
        for k, g in enumerate(graphs):
            if not is_strongly_connected(g):
                raise ConnectivityError(f"graph {k} of sequence is not strongly connected")
        object.__setattr__(self, "graphs", graphs)

    @property
    def n(self) -> int:
        return self.graphs[0].n

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)

    def schedule(self, steps: int) -> np.ndarray:
        """Graph index used at each of ``steps`` consecutive steps from 0."""
        if self.policy == "fixed":
            return np.full(steps, self.index, dtype=np.intp)
        u = self.rng().random(steps)
        return np.minimum((u * len(self.graphs)).astype(np.intp), len(self.graphs) - 1)


def next_graph(seq: GraphSequence, step: int, rng: np.random.Generator | None = None) -> Digraph:
    """Graph active at ``step``.

    With the random policy, ``rng`` is the caller-owned stream and is
    advanced by one draw.  Without it, the draw is recomputed from the seed
    so the result depends only on ``(seed, step)``.
    """
    if seq.policy == "fixed":
        return seq.graphs[seq.index]
    k = len(seq.graphs)
    if rng is not None:
        return seq.graphs[min(int(rng.random() * k), k - 1)]
    return seq.graphs[int(seq.schedule(step + 1)[step])]


def load_graph(path) -> Digraph:
    with open(path) as fh:
        data = json.load(fh)
    return graph_from_dict(data)


def graph_from_dict(data: dict) -> Digraph:
    try:
        n = int(data["n"])
        edges = [(e["from"], e["to"], float(e["w"])) for e in data["edges"]]
    except (KeyError, TypeError) as exc:
        raise GraphError(f"malformed graph object: {exc}") from exc
    return Digraph.from_edges(n, edges)


def graph_to_dict(g: Digraph) -> dict:
    return {"n": g.n, "edges": [{"from": i, "to": j, "w": w} for i, j, w in g.edges()]}


def save_graph(g: Digraph, path) -> None:
    Path(path).write_text(json.dumps(graph_to_dict(g), indent=2) + "\n")
