"""Pure-numpy Euler kernels; same contract as the compiled ``_ckernels``.

Both functions advance their state arrays in place, write snapshots into
the preallocated ``out`` buffers (row 0 is the initial state, then every
``record_every`` steps, then the final step if not already written) and
return the 1-based step at which the state diverged, or -1.
"""

import numpy as np

DIVERGENCE_NORM = 1e12


def _blown(*arrays):
    sq = 0.0
    for a in arrays:
        sq += float(a @ a)
    return not (sq <= DIVERGENCE_NORM * DIVERGENCE_NORM)


def affine_euler(Ms, c, z, h, schedule, record_every, out):
    steps = schedule.shape[0]
    out[0] = z
    row = 1
    for k in range(steps):
        M = Ms[schedule[k]]
        z += h * (M @ z + c)
        if _blown(z):
            return k + 1
        if (k + 1) % record_every == 0 or k + 1 == steps:
            out[row] = z
            row += 1
    return -1


def dist_euler(Lk, L, A, nbAt, alpha, gamma, m, x, y, v, h, steps, record_every,
               outx, outy, outv):
    outx[0] = x
    outy[0] = y
    outv[0] = v
    row = 1
    for k in range(steps):
        vr = np.repeat(v, m)
        xd = -alpha * (Lk @ (vr * x)) - nbAt @ y
        yd = A @ xd - gamma * (Lk @ (vr * y))
        vd = -(L @ v)
        x += h * xd
        y += h * yd
        v += h * vd
        if _blown(x, y, v):
            return k + 1
        if (k + 1) % record_every == 0 or k + 1 == steps:
            outx[row] = x
            outy[row] = y
            outv[row] = v
            row += 1
    return -1
