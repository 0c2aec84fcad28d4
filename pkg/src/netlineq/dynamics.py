"""Vector fields of the solver flows, initialization and Euler integration.

Algorithm kinds:

``central``
    gradient flow needing the network-wide residual sum.
``gdac``
    distributed flow; ``y`` tracks the average mismatch by dynamic average
    consensus (weight-balanced graph).
``gdac_tv``
    ``gdac`` with the graph switched every step.
``unbalanced_fixed_v``
    ``gdac`` with the Laplacian right-scaled by a known positive null vector.
``dist``
    as above, with the null vector estimated online by ``v' = -L v``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import kernels
from .graph import Digraph, GraphSequence, in_laplacian, next_graph
from .kernels import DivergenceError
from .linproblem import NetworkProblem, StackedOperators, stack

KINDS = ("central", "gdac", "gdac_tv", "unbalanced_fixed_v", "dist")
DEFAULT_DT = 2.5e-3


@dataclass(frozen=True, eq=False)
class SolverState:
    x: np.ndarray
    y: np.ndarray | None = None
    v: np.ndarray | None = None
    t: float = 0.0


@dataclass(frozen=True)
class AlgorithmSpec:
    kind: str
    alpha: float = 2.0
    beta: float = 0.1
    gamma: float = 20.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown algorithm kind {self.kind!r}; expected one of {KINDS}")
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError("alpha and beta must be positive")
        if self.kind != "central" and not self.gamma > 0:
            raise ValueError("gamma must be positive")

    @property
    def uses_y(self) -> bool:
        return self.kind != "central"


def _require_y(s: SolverState):
    if s.y is None:
        raise ValueError("state has no y component")


def _vrep(v, m):
    return np.repeat(np.asarray(v, dtype=float), m)


def rhs_central(p: NetworkProblem, ops: StackedOperators, s: SolverState, spec: AlgorithmSpec):
    x = s.x
    resid = ops.onesM.T @ (ops.blockA @ x - ops.stackedB)
    return -spec.alpha * (ops.lapKron @ x) - spec.beta * (ops.blockA.T @ (ops.onesM @ resid))


def _gdac_fields(ops, x, y, spec, scale=None):
    Lk = ops.lapKron
    lx = Lk @ (x if scale is None else scale * x)
    ly = Lk @ (y if scale is None else scale * y)
    xdot = -spec.alpha * lx - ops.n * spec.beta * (ops.blockA.T @ y)
    ydot = ops.blockA @ xdot - spec.gamma * ly
    return xdot, ydot


def rhs_gdac(p, ops, s, spec):
    _require_y(s)
    return _gdac_fields(ops, s.x, s.y, spec)


def rhs_timevarying(p, seq: GraphSequence, step: int, s: SolverState, spec, rng=None, ops_cache=None):
    """``gdac`` field with the graph active at ``step``.

    ``ops_cache`` maps graphs to stacked operators to avoid re-stacking.
    """
    g = next_graph(seq, step, rng)
    if ops_cache is None:
        ops = stack(p, in_laplacian(g))
    else:
        ops = ops_cache.get(g)
        if ops is None:
            ops = ops_cache[g] = stack(p, in_laplacian(g))
    return rhs_gdac(p, ops, s, spec)


def rhs_unbalanced_fixed_v(p, ops, vbar, s, spec):
    _require_y(s)
    vbar = np.asarray(vbar, dtype=float)
    if np.any(vbar <= 0):
        raise ValueError("vbar must be strictly positive")
    return _gdac_fields(ops, s.x, s.y, spec, _vrep(vbar, ops.m))


def rhs_dist(p, ops, s, spec):
    _require_y(s)
    if s.v is None:
        raise ValueError("state has no v component")
    xdot, ydot = _gdac_fields(ops, s.x, s.y, spec, _vrep(s.v, ops.m))
    return xdot, ydot, -(ops.lap @ s.v)


def rhs_dac(g: Digraph, x, zdot):
    """Dynamic average consensus field ``-L x + z'``."""
    return -(in_laplacian(g) @ np.asarray(x, dtype=float)) + np.asarray(zdot, dtype=float)


def default_init(p: NetworkProblem, spec: AlgorithmSpec, x0=None) -> SolverState:
    """``x = 0``, ``y = -b`` by default; ``y_i = A_i x_i - b_i`` for a custom ``x0``."""
    nm = p.n * p.m
    if x0 is None:
        x = np.zeros(nm)
        y = -p.b_blocks.reshape(-1)
    else:
        x = np.array(x0, dtype=float).reshape(nm)
        y = (np.einsum("kij,kj->ki", p.A_blocks, x.reshape(p.n, p.m)) - p.b_blocks).reshape(-1)
    v = np.full(p.n, 1.0 / p.n) if spec.kind == "dist" else None
    return SolverState(x=x, y=y if spec.uses_y else None, v=v, t=0.0)


def euler_step(s: SolverState, fields, h: float, step: int | None = None) -> SolverState:
    """Advance each present component by ``h * field``."""
    if not h > 0:
        raise ValueError("step size must be positive")
    if isinstance(fields, np.ndarray):
        fields = (fields,)
    fields = tuple(fields) + (None,) * (3 - len(fields))
    new = []
    for comp, f in zip((s.x, s.y, s.v), fields):
        if comp is None:
            new.append(None)
            continue
        if f is None:
            raise ValueError("missing field for a present state component")
        if not np.all(np.isfinite(f)):
            raise DivergenceError(step if step is not None else -1)
        new.append(comp + h * f)
    return SolverState(new[0], new[1], new[2], s.t + h)


def conserved_mismatch(p, ops, s: SolverState):
    _require_y(s)
    return ops.onesM.T @ (s.y - ops.blockA @ s.x)


def error_metrics(p, ops, s: SolverState, xstar) -> dict:
    n, m = ops.n, ops.m
    xstar = np.asarray(xstar, dtype=float)
    X = s.x.reshape(n, m)
    xbar = X.mean(axis=0)
    resid = ops.blockA @ s.x - ops.stackedB
    summed = ops.onesM.T @ resid
    out = {
        "err_avg": float(np.linalg.norm(xbar - xstar)),
        "err_full": float(np.linalg.norm(X - xstar)),
        "consensus_spread": float(np.linalg.norm(X - xbar)),
        "e_norm": None,
        "conserved_drift": None,
        "objective_f": float(summed @ summed),
    }
    if s.y is not None:
        out["e_norm"] = float(np.linalg.norm(s.y - np.tile(summed / n, n)))
        b = ops.onesM.T @ ops.stackedB
        out["conserved_drift"] = float(np.linalg.norm(conserved_mismatch(p, ops, s) + b))
    return out


# Affine forms z' = M z + c used by the compiled kernels.

def affine_system(p: NetworkProblem, L: np.ndarray, spec: AlgorithmSpec, vbar=None):
    """Matrix ``M`` and offset ``c`` with ``z' = M z + c`` for the linear kinds.

    ``z`` is ``x`` for ``central`` and ``[x; y]`` otherwise.
    """
    ops = stack(p, L)
    A, Lk, O = ops.blockA, ops.lapKron, ops.onesM
    if spec.kind == "central":
        AtO = A.T @ O
        return -spec.alpha * Lk - spec.beta * AtO @ O.T @ A, spec.beta * AtO @ (O.T @ ops.stackedB)
    if spec.kind == "unbalanced_fixed_v":
        Lk = Lk * _vrep(vbar, p.m)[None, :]
    elif spec.kind not in ("gdac", "gdac_tv"):
        raise ValueError(f"{spec.kind} is not a linear flow")
    nm = p.n * p.m
    Mxx = -spec.alpha * Lk
    Mxy = -p.n * spec.beta * A.T
    M = np.block([[Mxx, Mxy], [A @ Mxx, A @ Mxy - spec.gamma * Lk]])
    return M, np.zeros(2 * nm)


@dataclass(frozen=True, eq=False)
class Trajectory:
    steps: np.ndarray
    times: np.ndarray
    x: np.ndarray
    y: np.ndarray | None
    v: np.ndarray | None

    def state(self, k: int) -> SolverState:
        return SolverState(
            self.x[k],
            None if self.y is None else self.y[k],
            None if self.v is None else self.v[k],
            float(self.times[k]),
        )

    @property
    def final(self) -> SolverState:
        return self.state(-1)


def _laplacians(graph):
    if isinstance(graph, GraphSequence):
        return [in_laplacian(g) for g in graph.graphs]
    return [in_laplacian(graph)]


def simulate(p: NetworkProblem, graph, spec: AlgorithmSpec, h: float = DEFAULT_DT,
             steps: int = 1000, record_every: int = 10, init: SolverState | None = None,
             vbar=None, backend=None) -> Trajectory:
    """Integrate ``steps`` forward-Euler steps and return recorded snapshots.

    ``graph`` is a :class:`Digraph`, or a :class:`GraphSequence` for
    ``gdac_tv``.  With a sequence, the graph is drawn before each step.
    """
    if not h > 0 or steps < 1 or record_every < 1:
        raise ValueError("need h > 0, steps >= 1 and record_every >= 1")
    if init is None:
        init = default_init(p, spec)
    if isinstance(graph, GraphSequence):
        if spec.kind != "gdac_tv":
            graph = next_graph(graph, 0)
            schedule = np.zeros(steps, dtype=np.intp)
        else:
            schedule = graph.schedule(steps)
    else:
        schedule = np.zeros(steps, dtype=np.intp)
    laps = _laplacians(graph)
    nm = p.n * p.m
    rec = kernels.record_steps(steps, record_every)
    times = init.t + h * rec

    if spec.kind == "dist":
        ops = stack(p, laps[0])
        X, Y, V = kernels.dist_euler(
            ops.lapKron, ops.lap, ops.blockA, p.n * spec.beta * ops.blockA.T,
            spec.alpha, spec.gamma, p.m, init.x, init.y, init.v, h, steps, record_every,
            backend=backend,
        )
        return Trajectory(rec, times, X, Y, V)

    if spec.kind == "unbalanced_fixed_v" and vbar is None:
        raise ValueError("unbalanced_fixed_v needs vbar")
    systems = [affine_system(p, L, spec, vbar) for L in laps]
    Ms = np.stack([M for M, _ in systems])
    c = systems[0][1]
    z0 = init.x if spec.kind == "central" else np.concatenate([init.x, init.y])
    Z = kernels.affine_euler(Ms, c, z0, h, schedule, record_every, backend=backend)
    if spec.kind == "central":
        return Trajectory(rec, times, Z, None, None)
    return Trajectory(rec, times, Z[:, :nm], Z[:, nm:], None)


def simulate_reference(p, graph, spec, h=DEFAULT_DT, steps=100, init=None, vbar=None):
    """Step-by-step integration through the ``rhs_*`` functions.

    Slow; used to cross-check the kernels.  Returns the final state.
    """
    s = default_init(p, spec) if init is None else init
    cache = {}
    if isinstance(graph, GraphSequence):
        seq = graph
        rng = seq.rng()
    else:
        seq, rng = None, None
        ops = stack(p, in_laplacian(graph))
    for k in range(steps):
        if spec.kind == "gdac_tv":
            f = rhs_timevarying(p, seq, k, s, spec, rng, cache)
        elif spec.kind == "central":
            f = rhs_central(p, ops, s, spec)
        elif spec.kind == "gdac":
            f = rhs_gdac(p, ops, s, spec)
        elif spec.kind == "unbalanced_fixed_v":
            f = rhs_unbalanced_fixed_v(p, ops, vbar, s, spec)
        else:
            f = rhs_dist(p, ops, s, spec)
        s = euler_step(s, f, h, k + 1)
    return s


def check_init(p, spec, s: SolverState):
    """Warn when ``y(0)`` breaks the mismatch-tracking initialization."""
    if s.y is None:
        return
    ops = stack(p, np.zeros((p.n, p.n)))
    gap = conserved_mismatch(p, ops, s) + ops.onesM.T @ ops.stackedB
    if np.linalg.norm(gap) > 1e-12 * max(1.0, np.linalg.norm(ops.stackedB)):
        warnings.warn(
            "y(0) does not satisfy sum(y_i) = sum(A_i x_i - b_i); the limit will shift",
            stacklevel=2,
        )

