"""Timing of the compiled kernels against their numpy twins."""

import time

import numpy as np

from . import backend
from .graph_spectral import adjacency_batch, normalized_laplacian_batch
from .linalg import jacobi_eigh_batch

BENCH_HEADER = "kernel,backend,n,k,seconds,speedup,identical"


def _laplacians(n, k, seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(n, k, 3))
    lap, _ = normalized_laplacian_batch(adjacency_batch(pts))
    return lap


def _best_of(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def run(n=256, ks=(8, 32), repeat=3, seed=0):
    """One row per (kernel, backend, k); speedup is relative to the python backend."""
    names = backend.available()
    rows = []
    for k in ks:
        lap = _laplacians(n, k, seed)
        x = np.random.default_rng(seed).normal(size=(n, k, 64))
        grad = np.random.default_rng(seed + 1).normal(size=(n, 64))
        cases = {
            "jacobi_eigh": lambda fns: jacobi_eigh_batch(lap, sweeps_fn=fns["jacobi_sweeps"]),
            "set_max": lambda fns: fns["set_max"](x),
            "route_rows": lambda fns: fns["route_rows"](grad, fns["set_max"](x)[1], k),
        }
        for kernel, case in cases.items():
            timed = {}
            for name in names:
                fns = {f: backend.get(name, f) for f in ("jacobi_sweeps", "set_max", "route_rows")}
                timed[name] = _best_of(lambda: case(fns), repeat)
            ref_t, ref_out = timed["python"]
            for name, (t, out) in timed.items():
                same = all(np.array_equal(a, b) for a, b in zip(_flat(out), _flat(ref_out)))
                rows.append((kernel, name, n, k, t, ref_t / t, same))
    return rows


def _flat(out):
    return out if isinstance(out, tuple) else (out,)


def format_rows(rows):
    lines = [BENCH_HEADER]
    for kernel, name, n, k, t, sp, same in rows:
        lines.append(f"{kernel},{name},{n},{k},{t:.4f},{sp:.1f},{str(same).lower()}")
    return "\n".join(lines) + "\n"
