"""Differentiable building blocks with hand-written backward passes.

All forward functions accept arbitrary leading batch dimensions: a single
neighborhood is ``(k, m)``, a batch of clouds with ``C`` neighborhoods each
is ``(B, C, k, m)``. Parameter gradients are summed over those dimensions.
Each forward returns ``(output, tape)``; the matching backward consumes the
tape.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import backend
from .errors import ConfigurationError, InputError
from .graph_spectral import DEFAULT_SCHEME, build_graphs, fiedler_order_batch

MAX = "max"
AVG = "avg"


def _flat(a):
    return a.reshape(-1, a.shape[-1])


# ---------------------------------------------------------------------------
# spectral graph convolution


@dataclass
class SpecConvParams:
    g: np.ndarray
    w_f: np.ndarray

    def __post_init__(self):
        self.g = np.asarray(self.g, dtype=np.float64)
        self.w_f = np.asarray(self.w_f, dtype=np.float64)
        if self.g.ndim != 1 or self.w_f.ndim != 2:
            raise ConfigurationError("g must be 1-D and w_f 2-D")


@dataclass
class SpecConvTape:
    u: np.ndarray
    xt: np.ndarray
    p: np.ndarray
    # U @ P when the filter is applied last, else P @ W_f
    inner: np.ndarray
    filter_last: bool


def spectral_conv_forward(x, u, params):
    """``y = U ((diag(g) U^T x) W_f)``.

    ``u`` is the eigenvector basis of each neighborhood graph, shape
    ``(..., k, k)``. Matrix products are associated so the k-by-k products
    act on the narrower of the input and output widths.
    """
    x = np.asarray(x, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    k, m = x.shape[-2:]
    if u.shape[-1] != k or u.shape[-2] != k:
        raise ConfigurationError(f"basis {u.shape[-2:]} does not fit a {k}-point signal")
    if params.g.shape[0] != k:
        raise ConfigurationError(f"kernel has {params.g.shape[0]} entries for k={k}")
    if params.w_f.shape[0] != m:
        raise ConfigurationError(f"filter expects {params.w_f.shape[0]} input channels, got {m}")
    ut = np.swapaxes(u, -1, -2)
    xt = ut @ x
    p = params.g[:, None] * xt
    m_out = params.w_f.shape[1]
    if m <= m_out:
        inner = u @ p
        y = inner @ params.w_f
        filter_last = True
    else:
        inner = p @ params.w_f
        y = u @ inner
        filter_last = False
    return y, SpecConvTape(u, xt, p, inner, filter_last)


def spectral_conv_backward(grad_y, tape, params):
    """Gradients ``(grad_x, grad_g, grad_wf)``; the basis is a constant."""
    grad_y = np.asarray(grad_y, dtype=np.float64)
    u = tape.u
    ut = np.swapaxes(u, -1, -2)
    if tape.filter_last:
        grad_wf = _flat(tape.inner).T @ _flat(grad_y)
        grad_p = ut @ (grad_y @ params.w_f.T)
    else:
        grad_q = ut @ grad_y
        grad_wf = _flat(tape.p).T @ _flat(grad_q)
        grad_p = grad_q @ params.w_f.T
    k = grad_p.shape[-2]
    grad_g = (grad_p * tape.xt).reshape(-1, k, grad_p.shape[-1]).sum(axis=(0, 2))
    grad_x = u @ (params.g[:, None] * grad_p)
    return grad_x, grad_g, grad_wf


# ---------------------------------------------------------------------------
# shared per-point affine + ReLU


def point_mlp_forward(x, weights, bias):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != weights.shape[0]:
        raise ConfigurationError(f"MLP expects {weights.shape[0]} channels, got {x.shape[-1]}")
    z = x @ weights + bias
    return np.maximum(z, 0.0), (x, z)


def point_mlp_backward(grad_y, tape, weights):
    x, z = tape
    gz = np.where(z > 0.0, grad_y, 0.0)
    grad_w = _flat(x).T @ _flat(gz)
    grad_b = _flat(gz).sum(axis=0)
    return gz @ weights.T, grad_w, grad_b


def relu_forward(z):
    return np.maximum(z, 0.0), z


def relu_backward(grad, z):
    return np.where(z > 0.0, grad, 0.0)


# ---------------------------------------------------------------------------
# max pooling over the set


def _argmax_rows(x):
    """Max over axis -2 and the first index attaining it."""
    lead = x.shape[:-2]
    k, m = x.shape[-2:]
    best, arg = backend.set_max(x.reshape(-1, k, m))
    return best.reshape(lead + (m,)), arg.reshape(lead + (m,))


def _route(grad, arg, size):
    """Place ``grad (..., m)`` at rows ``arg`` of a zero ``(..., size, m)`` array."""
    m = grad.shape[-1]
    out = backend.route_rows(grad.reshape(-1, m), arg.reshape(-1, m), size)
    return out.reshape(grad.shape[:-1] + (size, m))


def max_pool_set(h):
    """Column-wise max over the point axis; returns ``(pooled (..., 1, m), argmax)``.

    Ties go to the lowest row index.
    """
    h = np.asarray(h, dtype=np.float64)
    if h.shape[-2] < 1:
        raise InputError("cannot pool an empty set")
    out, arg = _argmax_rows(h)
    return out[..., None, :], arg


def max_pool_backward(grad, arg, k):
    """Route ``grad (..., 1, m)`` to the argmax rows of a ``k``-row input."""
    grad = np.asarray(grad, dtype=np.float64)
    return _route(grad[..., 0, :], arg, k)


# ---------------------------------------------------------------------------
# recursive cluster pooling


@dataclass(frozen=True)
class PoolSpec:
    csize: int

    def __post_init__(self):
        if self.csize < 2:
            # a cluster of one never shrinks the set, so the recurrence would not end
            raise ConfigurationError(f"cluster size must be at least 2, got {self.csize}")

    @classmethod
    def for_neighborhood(cls, k):
        """The cluster size c with ``k == 2 c^2``; rejects other k."""
        c = math.isqrt(k // 2) if k > 0 else 0
        if k < 8 or 2 * c * c != k:
            raise ConfigurationError(f"cluster pooling needs k = 2*c^2, got k={k}")
        return cls(c)


@dataclass
class PoolStage:
    order: np.ndarray  # (..., padded_count) indices into the stage input rows
    count_in: int
    mode: str


@dataclass
class ClusterPlan:
    stages: list
    terminal_mode: str
    # representative coordinates before the terminal pool, for inspection
    coords: np.ndarray = field(default=None, repr=False)


def _pad_order(order, csize):
    count = order.shape[-1]
    groups = -(-count // csize)
    pad = groups * csize - count
    if pad:
        last = np.repeat(order[..., -1:], pad, axis=-1)
        order = np.concatenate([order, last], axis=-1)
    return order, groups


def _group_mean(grouped):
    """Mean over axis -2, summed strictly left to right."""
    acc = grouped[..., 0, :].copy()
    for j in range(1, grouped.shape[-2]):
        acc = acc + grouped[..., j, :]
    return acc / grouped.shape[-2]


def cluster_plan(coords, csize, scheme=DEFAULT_SCHEME, first_basis=None, sweeps_fn=None):
    """Fiedler orderings for every recurrence of cluster pooling.

    Depends only on coordinates, so it can be computed once per cloud and
    reused. ``first_basis`` short-circuits the first eigendecomposition when
    the caller already built the graph on the same coordinates.
    """
    coords = np.asarray(coords, dtype=np.float64)
    lead = coords.shape[:-2]
    count, d = coords.shape[-2:]
    if count < 1:
        raise InputError("cannot pool an empty set")
    stages = []
    mode = MAX
    cur = coords
    first = True
    while count > csize:
        if first and first_basis is not None:
            basis = np.asarray(first_basis)
        else:
            basis = build_graphs(cur.reshape(-1, count, d), scheme, sweeps_fn).basis
            basis = basis.reshape(lead + (count, count))
        first = False
        order = fiedler_order_batch(basis)
        order, groups = _pad_order(order, csize)
        stages.append(PoolStage(order, count, mode))
        sorted_coords = _gather_sorted(cur, order)
        cur = _group_mean(sorted_coords.reshape(lead + (groups, csize, d)))
        count = groups
        mode = AVG if mode == MAX else MAX
    return ClusterPlan(stages, mode, cur)


def _pool(x, mode):
    """Pool axis -2 of ``x``; returns ``(pooled without that axis, argmax or None)``."""
    if mode == MAX:
        return _argmax_rows(x)
    return _group_mean(x), None


def _unpool(grad, arg, mode, size):
    """Inverse of :func:`_pool` for gradients: ``grad (..., m) -> (..., size, m)``."""
    if mode == MAX:
        return _route(grad, arg, size)
    return np.broadcast_to(grad[..., None, :] / size, grad.shape[:-1] + (size, grad.shape[-1]))


def _flat_rows(order, count):
    """Row indices of ``order (..., L)`` into the flattened ``(prod(...) * count, m)`` array."""
    n = int(np.prod(order.shape[:-1])) if order.ndim > 1 else 1
    base = (np.arange(n) * count).reshape(order.shape[:-1] + (1,))
    return (order + base).reshape(-1)


def _gather_sorted(x, order):
    lead = x.shape[:-2]
    count, m = x.shape[-2:]
    flat = x.reshape(-1, m)[_flat_rows(order, count)]
    return flat.reshape(lead + (order.shape[-1], m))


def _scatter_rows(grad_sorted, order, count):
    lead = grad_sorted.shape[:-2]
    m = grad_sorted.shape[-1]
    if order.shape[-1] == count:
        inv = np.argsort(order, axis=-1)
        return _gather_sorted(grad_sorted, inv)
    n = int(np.prod(lead)) if lead else 1
    flat = np.zeros((n * count, m))
    np.add.at(flat, _flat_rows(order.reshape(n, -1), count), grad_sorted.reshape(-1, m))
    return flat.reshape(lead + (count, m))


@dataclass
class ClusterPoolTape:
    plan: ClusterPlan
    argmaxes: list
    terminal_arg: np.ndarray
    terminal_count: int
    k: int


def cluster_pool_apply(x, plan, csize):
    """Run the pooling recurrences of ``plan`` on features ``x (..., k, m)``."""
    x = np.asarray(x, dtype=np.float64)
    lead = x.shape[:-2]
    k, m = x.shape[-2:]
    argmaxes = []
    cur = x
    for st in plan.stages:
        if cur.shape[-2] != st.count_in:
            raise ConfigurationError("pool plan does not match the feature rows")
        groups = st.order.shape[-1] // csize
        sorted_x = _gather_sorted(cur, st.order)
        pooled, arg = _pool(sorted_x.reshape(lead + (groups, csize, m)), st.mode)
        argmaxes.append(arg)
        cur = pooled
    out, targ = _pool(cur, plan.terminal_mode)
    tape = ClusterPoolTape(plan, argmaxes, targ, cur.shape[-2], k)
    return out[..., None, :], tape


def cluster_pool_forward(x, cluster_coords, spec, scheme=DEFAULT_SCHEME, use_features=False,
                         first_basis=None):
    """Recursive cluster pooling of a ``(..., k, m)`` feature set to ``(..., 1, m)``.

    Each recurrence builds a graph on the current representatives, sorts
    them along the Fiedler vector, cuts the sorted sequence into groups of
    ``spec.csize`` and pools every group, alternating max and average
    starting with max. When at most ``csize`` rows remain they are pooled
    all at once with the mode that is current at that point.

    Graphs come from ``cluster_coords`` (a pooled cluster sits at the mean
    of its members) unless ``use_features`` is set, in which case the
    current pooled features themselves define the graph.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-2] < 1:
        raise InputError("cannot pool an empty set")
    if not use_features:
        plan = cluster_plan(cluster_coords, spec.csize, scheme, first_basis)
        return cluster_pool_apply(x, plan, spec.csize)

    lead = x.shape[:-2]
    csize = spec.csize
    stages, argmaxes = [], []
    mode = MAX
    cur = x
    while cur.shape[-2] > csize:
        count, m = cur.shape[-2:]
        basis = build_graphs(cur.reshape(-1, count, m), scheme).basis.reshape(lead + (count, count))
        order, groups = _pad_order(fiedler_order_batch(basis), csize)
        stages.append(PoolStage(order, count, mode))
        sorted_x = _gather_sorted(cur, order)
        cur, arg = _pool(sorted_x.reshape(lead + (groups, csize, m)), mode)
        argmaxes.append(arg)
        mode = AVG if mode == MAX else MAX
    out, targ = _pool(cur, mode)
    plan = ClusterPlan(stages, mode)
    return out[..., None, :], ClusterPoolTape(plan, argmaxes, targ, cur.shape[-2], x.shape[-2])


def cluster_pool_backward(grad, tape):
    """Route ``grad (..., 1, m)`` back to the ``k`` input rows."""
    grad = np.asarray(grad, dtype=np.float64)[..., 0, :]
    plan = tape.plan
    g = _unpool(grad, tape.terminal_arg, plan.terminal_mode, tape.terminal_count)
    for st, arg in zip(reversed(plan.stages), reversed(tape.argmaxes)):
        groups = g.shape[-2]
        csize = st.order.shape[-1] // groups
        g = _unpool(g, arg, st.mode, csize)
        g = g.reshape(g.shape[:-3] + (groups * csize, g.shape[-1]))
        g = _scatter_rows(g, st.order, st.count_in)
    return np.ascontiguousarray(g)


# ---------------------------------------------------------------------------
# feature propagation (decoder-side interpolation)


@dataclass
class FPTape:
    interp: np.ndarray
    concat: np.ndarray
    z: np.ndarray
    n_interp: int


def interpolation_matrix(coarse_coords, fine_coords, neighbors=3):
    """Dense ``(..., n_fine, n_coarse)`` matrix of normalized inverse-distance weights.

    Each row holds the weights of that fine point's ``neighbors`` nearest
    coarse points (ties by index) and zeros elsewhere.
    """
    coarse_coords = np.asarray(coarse_coords, dtype=np.float64)
    fine_coords = np.asarray(fine_coords, dtype=np.float64)
    nc = coarse_coords.shape[-2]
    if nc < 1:
        raise InputError("feature propagation needs at least one coarse point")
    diff = fine_coords[..., :, None, :] - coarse_coords[..., None, :, :]
    d2 = (diff * diff).sum(axis=-1)
    j = min(neighbors, nc)
    idx = np.argsort(d2, axis=-1, kind="stable")[..., :j]
    d = np.sqrt(np.take_along_axis(d2, idx, axis=-1))
    inv = 1.0 / (d + 1e-10)
    w = inv / inv.sum(axis=-1, keepdims=True)
    s = np.zeros(d2.shape)
    np.put_along_axis(s, idx, w, axis=-1)
    return s


def fp_interpolate(coarse_coords, coarse_feats, fine_coords, skip_feats, weights, bias,
                   interp=None):
    """3-NN inverse-distance interpolation, skip concatenation, shared affine + ReLU.

    ``interp`` may carry a precomputed :func:`interpolation_matrix`.
    """
    coarse_feats = np.asarray(coarse_feats, dtype=np.float64)
    if interp is None:
        interp = interpolation_matrix(coarse_coords, fine_coords)
    feats = interp @ coarse_feats
    parts = [feats]
    if skip_feats is not None and np.shape(skip_feats)[-1] > 0:
        parts.append(np.asarray(skip_feats, dtype=np.float64))
    concat = np.concatenate(parts, axis=-1) if len(parts) > 1 else feats
    if concat.shape[-1] != weights.shape[0]:
        raise ConfigurationError(f"FP layer expects {weights.shape[0]} channels, got {concat.shape[-1]}")
    z = concat @ weights + bias
    return np.maximum(z, 0.0), FPTape(interp, concat, z, feats.shape[-1])


def fp_backward(grad, tape, weights):
    """Returns ``(grad_coarse_feats, grad_skip, grad_w, grad_b)``."""
    gz = np.where(tape.z > 0.0, grad, 0.0)
    grad_w = _flat(tape.concat).T @ _flat(gz)
    grad_b = _flat(gz).sum(axis=0)
    gc = gz @ weights.T
    grad_coarse = np.swapaxes(tape.interp, -1, -2) @ gc[..., : tape.n_interp]
    return grad_coarse, gc[..., tape.n_interp:], grad_w, grad_b
