"""Backend selection for the Euler integration kernels.

The compiled extension is used when it imports; setting
``NETLINEQ_PURE_PYTHON=1`` forces the numpy fallback.
"""

import os

import numpy as np

from . import _kernels_py

_compiled = None
if os.environ.get("NETLINEQ_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _compiled
    except ImportError:
        _compiled = None

BACKENDS = {"python": _kernels_py}
if _compiled is not None:
    BACKENDS["compiled"] = _compiled
BACKEND = "compiled" if _compiled is not None else "python"


class DivergenceError(RuntimeError):
    def __init__(self, step):
        super().__init__(f"state diverged (non-finite or norm > 1e12) at step {step}")
        self.step = step


def record_steps(steps: int, record_every: int) -> np.ndarray:
    """Step indices at which snapshots are taken."""
    idx = list(range(0, steps + 1, record_every))
    if idx[-1] != steps:
        idx.append(steps)
    return np.asarray(idx, dtype=np.int64)


def _backend(name):
    name = name or BACKEND
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} unavailable; have {sorted(BACKENDS)}") from None


def affine_euler(Ms, c, z0, h, schedule, record_every, backend=None):
    """Euler-integrate ``z' = M_k z + c`` with ``M_k = Ms[schedule[k]]``.

    Returns snapshots with shape ``(len(record_steps), d)``.
    """
    Ms = np.ascontiguousarray(Ms, dtype=np.float64)
    if Ms.ndim == 2:
        Ms = Ms[None]
    c = np.ascontiguousarray(c, dtype=np.float64)
    z = np.array(z0, dtype=np.float64)
    schedule = np.ascontiguousarray(schedule, dtype=np.intp)
    steps = schedule.shape[0]
    out = np.empty((len(record_steps(steps, record_every)), z.shape[0]))
    fail = _backend(backend).affine_euler(Ms, c, z, float(h), schedule, int(record_every), out)
    if fail >= 0:
        raise DivergenceError(fail)
    return out


def dist_euler(Lk, L, A, nbAt, alpha, gamma, m, x0, y0, v0, h, steps, record_every, backend=None):
    """Euler-integrate the eigenvector-estimating flow; returns ``(X, Y, V)`` snapshots."""
    x = np.array(x0, dtype=np.float64)
    y = np.array(y0, dtype=np.float64)
    v = np.array(v0, dtype=np.float64)
    nrec = len(record_steps(steps, record_every))
    outx = np.empty((nrec, x.size))
    outy = np.empty((nrec, y.size))
    outv = np.empty((nrec, v.size))
    args = [np.ascontiguousarray(a, dtype=np.float64) for a in (Lk, L, A, nbAt)]
    fail = _backend(backend).dist_euler(
        *args, float(alpha), float(gamma), int(m), x, y, v, float(h), int(steps),
        int(record_every), outx, outy, outv,
    )
    if fail >= 0:
        raise DivergenceError(fail)
    return outx, outy, outv
