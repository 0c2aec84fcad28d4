"""Spectral certificates for the consensus-gain threshold and flow rates.

All stacked matrices are mn x mn with agent-major ordering, matching
:func:`netlineq.linproblem.stack`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import (
    ConnectivityError,
    Digraph,
    GraphError,
    in_laplacian,
    is_strongly_connected,
    is_weight_balanced,
    positive_null_eigenvector,
)
from .linproblem import NetworkProblem, nullspace_condition_holds, stack

ZERO_RTOL = 1e-9
CONTEXTS = ("balanced", "time-varying", "unbalanced")


class SpectralError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class GammaCertificate:
    q11: np.ndarray
    q12: np.ndarray
    lambda2_q11: float
    lambda2_lap: float
    gamma_bar: float
    context: str
    per_graph: list = field(default_factory=list)


def lambda2_psd(M: np.ndarray, tol: float = ZERO_RTOL) -> float:
    """Smallest eigenvalue of a PSD matrix above ``tol * lambda_max``."""
    M = np.asarray(M, dtype=float)
    scale = np.linalg.norm(M, 2) if M.size else 0.0
    if np.max(np.abs(M - M.T), initial=0.0) > 1e-10 * max(scale, 1e-300):
        raise SpectralError("matrix is not symmetric")
    vals = np.linalg.eigvalsh((M + M.T) / 2)
    lmax = vals[-1]
    if lmax <= 0:
        raise SpectralError("matrix has no positive eigenvalue")
    if vals[0] < -tol * lmax:
        raise SpectralError(f"matrix is not positive semidefinite (min eig {vals[0]:.3e})")
    nonzero = vals[vals > tol * lmax]
    return float(nonzero[0])


def min_nonzero_real_part(L: np.ndarray, tol: float = ZERO_RTOL) -> float:
    """Smallest real part among the eigenvalues of ``L`` away from zero."""
    vals = np.linalg.eigvals(L)
    mags = np.abs(vals)
    keep = mags > tol * mags.max()
    return float(np.min(vals[keep].real))


def _check_balanced(g: Digraph):
    if not is_strongly_connected(g):
        raise ConnectivityError("graph is not strongly connected")
    if not is_weight_balanced(g):
        raise GraphError("graph is not weight-balanced")


def _check_alpha_beta(alpha, beta):
    if not (alpha > 0 and beta > 0):
        raise ValueError("alpha and beta must be positive")


def _coupling_terms(p: NetworkProblem, g: Digraph):
    ops = stack(p, in_laplacian(g))
    A = ops.blockA
    AtOOtA = A.T @ ops.onesM @ ops.onesM.T @ A
    return ops, A, AtOOtA


def _q_matrices(p, g, alpha, beta, vbar=None):
    ops, A, AtOOtA = _coupling_terms(p, g)
    Lk = ops.lapKron
    if vbar is not None:
        # L V for the head-scaled (balanced) interpretation
        Lk = Lk @ np.kron(np.diag(vbar), np.eye(p.m))
    n = p.n
    q11 = 0.5 * alpha * (Lk + Lk.T) + beta * AtOOtA
    q12 = 0.5 * (n * beta * A.T + alpha * Lk.T @ A.T + beta * AtOOtA @ A.T)
    return q11, q12, A


def q_matrices_balanced(p: NetworkProblem, g: Digraph, alpha: float, beta: float):
    _check_balanced(g)
    _check_alpha_beta(alpha, beta)
    q11, q12, _ = _q_matrices(p, g, alpha, beta)
    return q11, q12


def q_matrices_unbalanced(p: NetworkProblem, g: Digraph, alpha: float, beta: float):
    _check_alpha_beta(alpha, beta)
    vbar = positive_null_eigenvector(g)
    q11, q12, _ = _q_matrices(p, g, alpha, beta, vbar)
    return q11, q12


def _lap_sym(g: Digraph, vbar=None) -> np.ndarray:
    L = in_laplacian(g)
    if vbar is not None:
        L = L @ np.diag(vbar)
    return L + L.T


def _gamma_from(q11, q12, A, n, beta, lam_lap):
    lam_q11 = lambda2_psd(q11)
    S = q12.T @ q12 / lam_q11 - n * beta * A @ A.T
    top = np.linalg.eigvalsh((S + S.T) / 2)[-1]
    return max(2.0 / lam_lap * top, 0.0), lam_q11


def certificate(p: NetworkProblem, g: Digraph, alpha: float, beta: float,
                context: str = "balanced", check_nullspace: bool = True) -> GammaCertificate:
    """Threshold certificate for a single graph.

    ``context`` selects the balanced construction or the unbalanced one
    built from ``L diag(vbar)``.
    """
    if context not in ("balanced", "unbalanced"):
        raise ValueError(f"single-graph certificate context must be balanced/unbalanced, got {context!r}")
    _check_alpha_beta(alpha, beta)
    if context == "balanced":
        _check_balanced(g)
        vbar = None
    else:
        vbar = positive_null_eigenvector(g)
    if check_nullspace and not nullspace_condition_holds(p):
        raise SpectralError("null-space condition null(A) in null(A_i) fails")
    q11, q12, A = _q_matrices(p, g, alpha, beta, vbar)
    lam_lap = lambda2_psd(_lap_sym(g, vbar))
    gamma, lam_q11 = _gamma_from(q11, q12, A, p.n, beta, lam_lap)
    return GammaCertificate(q11, q12, lam_q11, lam_lap, gamma, context)


def gamma_bar_balanced(p: NetworkProblem, g: Digraph, alpha: float, beta: float) -> float:
    return certificate(p, g, alpha, beta, "balanced").gamma_bar


def gamma_bar_unbalanced(p: NetworkProblem, g: Digraph, alpha: float, beta: float) -> float:
    return certificate(p, g, alpha, beta, "unbalanced").gamma_bar


def gamma_hat_timevarying(p: NetworkProblem, graphs, alpha: float, beta: float) -> float:
    return timevarying_certificate(p, graphs, alpha, beta).gamma_bar


def timevarying_certificate(p: NetworkProblem, graphs, alpha, beta) -> GammaCertificate:
    """Worst case over a finite switching set; matrices are those of the maximizer."""
    graphs = list(graphs)
    if not graphs:
        raise ValueError("empty graph list")
    certs = [certificate(p, g, alpha, beta, "balanced") for g in graphs]
    worst = max(certs, key=lambda c: c.gamma_bar)
    return GammaCertificate(
        worst.q11, worst.q12, worst.lambda2_q11, worst.lambda2_lap,
        worst.gamma_bar, "time-varying", [c.gamma_bar for c in certs],
    )


def central_rate_bound(p: NetworkProblem, g: Digraph, alpha: float, beta: float) -> float:
    """Decay-rate bound for ``V = |x - x*|^2 / 2`` under the centralized flow.

    The state norm itself decays at least at half this rate.
    """
    _check_balanced(g)
    _check_alpha_beta(alpha, beta)
    _, _, AtOOtA = _coupling_terms(p, g)
    lam_lap = lambda2_psd(_lap_sym(g))
    return 2.0 * min(0.5 * alpha * lam_lap, beta * lambda2_psd(AtOOtA))


def qbar_matrix(p, g, alpha, beta, gamma, context="balanced") -> np.ndarray:
    """Block matrix whose definiteness certifies exponential decay at ``gamma``."""
    if context == "time-varying":
        context = "balanced"
    cert = certificate(p, g, alpha, beta, context, check_nullspace=False)
    A = stack(p, in_laplacian(g)).blockA
    d = A.shape[0]
    q22 = 0.5 * gamma * cert.lambda2_lap * np.eye(d) + p.n * beta * A @ A.T
    return np.block([[cert.lambda2_q11 * np.eye(d), cert.q12], [cert.q12.T, q22]])


def qbar_min_eig(p, g, alpha, beta, gamma, context="balanced") -> float:
    Q = qbar_matrix(p, g, alpha, beta, gamma, context)
    return float(np.linalg.eigvalsh((Q + Q.T) / 2)[0])


def qbar_is_pd(p, g, alpha, beta, gamma, context="balanced") -> bool:
    return qbar_min_eig(p, g, alpha, beta, gamma, context) > 0
