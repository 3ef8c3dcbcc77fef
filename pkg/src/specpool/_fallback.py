"""Pure-numpy twin of the compiled Jacobi kernel.

Vectorized across the stack: every (p, q) rotation is applied to all
still-unconverged matrices at once. Operation order matches
``_kernels.pyx`` so results agree bit for bit.
"""

import numpy as np


def _sweep(a, v):
    k = a.shape[1]
    for p in range(k - 1):
        for q in range(p + 1, k):
            apq = a[:, p, q]
            nz = apq != 0.0
            if not nz.any():
                continue
            app = a[:, p, p]
            aqq = a[:, q, q]
            theta = (aqq - app) / np.where(nz, 2.0 * apq, 1.0)
            big = np.abs(theta) > 1e150
            with np.errstate(over="ignore", invalid="ignore"):
                t = 1.0 / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
            t = np.where(theta < 0.0, -t, t)
            t = np.where(big, 0.5 / np.where(big, theta, 1.0), t)
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            m = nz[:, None]
            cc = c[:, None]
            ss = s[:, None]

            x = a[:, :, p].copy()
            y = a[:, :, q].copy()
            a[:, :, p] = np.where(m, cc * x - ss * y, x)
            a[:, :, q] = np.where(m, ss * x + cc * y, y)
            x = a[:, p, :].copy()
            y = a[:, q, :].copy()
            a[:, p, :] = np.where(m, cc * x - ss * y, x)
            a[:, q, :] = np.where(m, ss * x + cc * y, y)
            a[nz, p, q] = 0.0
            a[nz, q, p] = 0.0
            x = v[:, :, p].copy()
            y = v[:, :, q].copy()
            v[:, :, p] = np.where(m, cc * x - ss * y, x)
            v[:, :, q] = np.where(m, ss * x + cc * y, y)


def _max_offdiag(a):
    k = a.shape[1]
    if k < 2:
        return np.zeros(a.shape[0])
    iu = np.triu_indices(k, 1)
    return np.abs(a[:, iu[0], iu[1]]).max(axis=1)


def jacobi_sweeps(a_in, tol, max_sweeps=64):
    """Same contract as ``specpool._kernels.jacobi_sweeps``."""
    a = np.array(a_in, dtype=np.float64, order="C", copy=True)
    tol = np.asarray(tol, dtype=np.float64)
    n, k, _ = a.shape
    v = np.broadcast_to(np.eye(k), (n, k, k)).copy()
    sweeps = np.zeros(n, dtype=np.int64)
    off = np.zeros(n)
    active = np.arange(n)
    sweep = 0
    while active.size:
        cur = _max_offdiag(a[active])
        done = cur <= tol[active]
        off[active] = cur
        sweeps[active[done]] = sweep
        if sweep == max_sweeps:
            sweeps[active[~done]] = -1
            break
        active = active[~done]
        if not active.size:
            break
        sub_a = a[active]
        sub_v = v[active]
        _sweep(sub_a, sub_v)
        a[active] = sub_a
        v[active] = sub_v
        sweep += 1
    diag = np.ascontiguousarray(np.diagonal(a, axis1=1, axis2=2))
    return diag, v, sweeps, off


def set_max(x):
    """Max over axis 1 of ``(n, k, m)`` and the first row attaining it."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    arg = np.argmax(x, axis=1)
    return np.take_along_axis(x, arg[:, None, :], axis=1)[:, 0, :], arg


def route_rows(grad, arg, k):
    n, m = grad.shape
    out = np.zeros((n, k, m))
    np.put_along_axis(out, arg[:, None, :], grad[:, None, :], axis=1)
    return out
