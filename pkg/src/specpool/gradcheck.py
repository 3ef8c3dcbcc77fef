"""Central finite-difference gradient checks."""

import numpy as np

STEP = 1e-5
# denominators below this are treated as this, so near-zero gradients are
# compared absolutely
FLOOR = 1e-6


def numeric_grad(f, x, h=STEP):
    """Central differences of scalar ``f`` at array ``x`` (restored on return)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_error(analytic, numeric, floor=FLOOR):
    """Largest per-coordinate relative error."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    den = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float((np.abs(a - n) / den).max())


def check(f, x, analytic, h=STEP):
    return rel_error(analytic, numeric_grad(f, x, h))
