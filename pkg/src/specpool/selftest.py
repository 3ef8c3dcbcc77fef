"""Property suites run by ``specpool selftest``.

Each suite returns ``(passed, total, failures)``. Functions are looked up
through their modules at call time so a test can patch one in and watch
the matching suite fail.
"""

import time

import numpy as np

from . import data_io
from . import gradcheck as G
from . import graph_spectral as gs
from . import layers as L
from . import linalg, oracles
from . import model as M
from . import training as T
from .graph_spectral import RAW_DISTANCE, WeightScheme


class _Suite:
    def __init__(self):
        self.passed = 0
        self.total = 0
        self.failures = []

    def check(self, ok, what):
        self.total += 1
        if ok:
            self.passed += 1
        else:
            self.failures.append(what)


def _sym(rng, k):
    a = rng.normal(size=(k, k))
    return a + a.T


def suite_linalg(rng, n=20):
    s = _Suite()
    for i in range(n):
        k = int(rng.integers(2, 33))
        a = _sym(rng, k)
        vals, u = linalg.jacobi_eigh(a)
        s.check(np.abs(u.T @ u - np.eye(k)).max() < 1e-9, f"orthonormality #{i}")
        recon = np.abs(a - (u * vals) @ u.T).max()
        s.check(recon < 1e-9 * max(1.0, linalg.inf_norm(a)), f"reconstruction #{i}")
        s.check(bool(np.all(np.diff(vals) >= 0)), f"ascending #{i}")
    a = rng.normal(size=(5, 4))
    b = rng.normal(size=(4, 3))
    s.check(np.abs(linalg.matmul(a, b) - oracles.triple_loop_matmul(a, b)).max() < 1e-12, "matmul")
    return s


def suite_spectral(rng, n=200):
    s = _Suite()
    for i in range(n):
        k = int(rng.choice([8, 16, 32]))
        scheme = WeightScheme() if i % 2 == 0 else WeightScheme(RAW_DISTANCE)
        x = rng.normal(size=(k, 3))
        g = gs.build_graph(x, scheme)
        lam = g.eigenvalues
        s.check(lam.min() >= -1e-9 and lam.max() <= 2 + 1e-9, f"spectral range #{i}")
        s.check(np.abs(g.laplacian - (g.basis * lam) @ g.basis.T).max() < 1e-9, f"L = U diag U^T #{i}")
        sig = rng.normal(size=(k, 4))
        back = gs.igft(g.basis, gs.gft(g.basis, sig))
        s.check(np.abs(back - sig).max() < 1e-9, f"GFT round trip #{i}")
        null = np.sqrt(g.degrees)
        s.check(np.abs(g.laplacian @ null).max() < 1e-8, f"null vector #{i}")
    return s


def suite_convolution(rng, n=100):
    s = _Suite()
    for i in range(n):
        k = int(rng.choice([8, 16, 32]))
        m = int(rng.integers(1, 6))
        g = gs.build_graph(rng.normal(size=(k, 3)))
        x = rng.normal(size=(k, m))
        y, _ = L.spectral_conv_forward(x, g.basis, L.SpecConvParams(g.eigenvalues, np.eye(m)))
        s.check(np.abs(y - g.laplacian @ x).max() < 1e-8, f"g = eigenvalues gives L x #{i}")
        y, _ = L.spectral_conv_forward(x, g.basis, L.SpecConvParams(np.ones(k), np.eye(m)))
        s.check(np.abs(y - x).max() < 1e-10, f"g = 1 gives x #{i}")
        gv = rng.normal(size=k)
        xs = rng.normal(size=(k, 1))
        y, _ = L.spectral_conv_forward(xs, g.basis, L.SpecConvParams(gv, np.ones((1, 1))))
        had = g.basis @ ((g.basis.T @ xs)[:, 0] * gv)
        s.check(np.abs(y[:, 0] - had).max() < 1e-10, f"Hadamard form #{i}")
    return s


def _grad_spec_conv(rng, s, i):
    k, m, mo = int(rng.choice([8, 16])), 3, 4
    g = gs.build_graph(rng.normal(size=(k, 3)))
    x = rng.normal(size=(k, m))
    p = L.SpecConvParams(rng.normal(size=k), rng.normal(size=(m, mo)))
    c = rng.normal(size=(k, mo))

    def f():
        return float((L.spectral_conv_forward(x, g.basis, p)[0] * c).sum())

    _, tape = L.spectral_conv_forward(x, g.basis, p)
    gx, gg, gw = L.spectral_conv_backward(c, tape, p)
    s.check(G.check(f, x, gx) < 1e-4, f"spec-conv dx #{i}")
    s.check(G.check(f, p.g, gg) < 1e-4, f"spec-conv dg #{i}")
    s.check(G.check(f, p.w_f, gw) < 1e-4, f"spec-conv dW #{i}")


def _grad_cluster_pool(rng, s, i):
    k, c = (8, 2) if i % 2 == 0 else (32, 4)
    h = rng.normal(size=(k, 3))
    coords = rng.normal(size=(k, 3))
    cw = rng.normal(size=(1, 3))
    spec = L.PoolSpec(c)

    def f():
        return float((L.cluster_pool_forward(h, coords, spec)[0] * cw).sum())

    _, tape = L.cluster_pool_forward(h, coords, spec)
    s.check(G.check(f, h, L.cluster_pool_backward(cw, tape)) < 1e-4, f"cluster pool k={k} #{i}")


def _grad_point_mlp(rng, s, i):
    x = rng.normal(size=(6, 4))
    w = rng.normal(size=(4, 5))
    b = rng.normal(size=5)
    c = rng.normal(size=(6, 5))

    def f():
        return float((L.point_mlp_forward(x, w, b)[0] * c).sum())

    _, tape = L.point_mlp_forward(x, w, b)
    gx, gw, gb = L.point_mlp_backward(c, tape, w)
    s.check(max(G.check(f, x, gx), G.check(f, w, gw), G.check(f, b, gb)) < 1e-4, f"point MLP #{i}")


def _grad_dense(rng, s, i):
    x = rng.normal(size=(6, 4))
    w = rng.normal(size=(4, 5))
    b = rng.normal(size=5)
    gamma = rng.uniform(0.5, 1.5, size=5)
    beta = rng.normal(size=5)
    c = rng.normal(size=(6, 5))

    def run():
        bn = (gamma, beta, np.zeros(5), np.ones(5))
        return M.dense_layer(x, w, b, bn, 0.7, "train", np.random.default_rng(i))

    def f():
        return float((run()[0] * c).sum())

    _, tape = run()
    gx, gw, gb, gg, gbeta = M.dense_backward(c, tape, w, gamma)
    err = max(G.check(f, x, gx), G.check(f, w, gw), G.check(f, gamma, gg), G.check(f, beta, gbeta))
    s.check(err < 1e-4, f"dense + batch norm + dropout #{i}")
    # batch norm cancels the bias exactly, so its relative error is undefined;
    # both gradients must vanish instead
    nb = G.numeric_grad(f, b)
    s.check(np.abs(gb).max() < 1e-10 and np.abs(nb).max() < 1e-8, f"bias ahead of batch norm #{i}")


def _grad_cross_entropy(rng, s, i):
    logits = rng.normal(size=(4, 5))
    y = rng.integers(0, 5, size=4)
    _, gl = T.cross_entropy(logits, y)
    s.check(G.check(lambda: T.cross_entropy(logits, y)[0], logits, gl) < 1e-4, f"cross entropy #{i}")


def suite_gradients(rng, n=50):
    s = _Suite()
    for i in range(n):
        _grad_spec_conv(rng, s, i)
        _grad_cluster_pool(rng, s, i)
        _grad_point_mlp(rng, s, i)
        _grad_dense(rng, s, i)
        _grad_cross_entropy(rng, s, i)
    return s


def suite_algorithm1(rng, n=100):
    """``n`` instances of each of (k=8, c=2) and (k=32, c=4)."""
    s = _Suite()
    for k, c in ((8, 2), (32, 4)):
        for i in range(n):
            x = rng.normal(size=(k, 3))
            coords = rng.normal(size=(k, 3))
            out, _ = L.cluster_pool_forward(x, coords, L.PoolSpec(c))
            ref = oracles.literal_cluster_pool(x, coords, c)
            s.check(np.array_equal(out, ref), f"literal trace k={k} #{i}")
    return s


def suite_set_function(rng, n=10, perms=20):
    s = _Suite()
    arch = M.scaled_arch("4l-spec-cp", 4, centroids=(32, 8), widths=(16, 16, 16), ks=(32, 8), fc=(16, 16))
    state = M.build_network(arch, 0)
    for i in range(n):
        cloud = data_io.PointCloud(rng.normal(size=(128, 3)))
        ref = M.forward_classify(state, cloud)
        worst = 0.0
        for _ in range(perms):
            perm = rng.permutation(len(cloud))
            out = M.forward_classify(state, data_io.PointCloud(cloud.coords[perm]))
            worst = max(worst, float(np.abs(out - ref).max()))
        s.check(worst < 1e-6, f"permutation, cloud #{i}")
    return s


SUITES = {
    "linalg": suite_linalg,
    "spectral": suite_spectral,
    "convolution": suite_convolution,
    "gradients": suite_gradients,
    "algorithm1": suite_algorithm1,
    "set_function": suite_set_function,
}


def run(seed=0, out=print):
    """Run every suite; returns the names of the suites with failures."""
    failed = []
    for name, fn in SUITES.items():
        t0 = time.perf_counter()
        try:
            s = fn(np.random.default_rng(seed))
        except Exception as exc:  # a crash counts as a failed suite
            out(f"{name:14s} ERROR {type(exc).__name__}: {exc}")
            failed.append(name)
            continue
        status = "ok" if not s.failures else "FAIL"
        out(f"{name:14s} {s.passed}/{s.total} {status} ({time.perf_counter() - t0:.1f}s)")
        for f in s.failures[:5]:
            out(f"  failed: {f}")
        if s.failures:
            failed.append(name)
    return failed
