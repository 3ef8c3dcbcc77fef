"""Hierarchical point-set networks: architectures, parameters, forward and backward.

A network is a stack of set-abstraction layers (farthest point sampling,
k-NN grouping, a per-neighborhood kernel, then pooling) followed by either
a fully connected classification head or feature-propagation layers and a
per-point segmentation head.

Everything that depends only on point coordinates (centroids, neighbor
lists, graph bases, cluster orderings, interpolation weights) is collected
in a :class:`Geometry` up front. It is a constant of the forward pass and
can be cached per cloud when the inputs do not change between epochs.
"""

import json
import math
import struct
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from . import layers as L
from .errors import ConfigurationError, InputError
from .graph_spectral import DEFAULT_SCHEME, WeightScheme, build_graphs
from .sampling import fps, knn_many

POINT_MLP = "point_mlp"
SPEC_CONV = "spec_conv"
MAX_POOL = "max"
CLUSTER_POOL = "cluster_pool"
CLASSIFY = "classify"
SEGMENT = "segment"
BN_EPS = 1e-5


@dataclass(frozen=True)
class LayerSpec:
    n_centroids: int
    k: int
    m: int
    kernel: str = SPEC_CONV
    pooling: str = MAX_POOL

    @property
    def csize(self):
        return L.PoolSpec.for_neighborhood(self.k).csize


@dataclass(frozen=True)
class ArchSpec:
    name: str
    layers: tuple
    head: str = CLASSIFY
    n_out: int = 40
    dim: int = 3
    in_features: int = 0
    fc: tuple = (512, 256)
    keep_prob: float = 0.5
    seg_hidden: int = 128
    weight_scheme: WeightScheme = DEFAULT_SCHEME
    graph_source: str = "spatial"

    def validate(self):
        if not self.layers:
            raise ConfigurationError("architecture has no layers")
        prev_c = None
        for i, ly in enumerate(self.layers):
            tag = f"layer {i + 1}"
            if ly.kernel not in (POINT_MLP, SPEC_CONV):
                raise ConfigurationError(f"{tag}: unknown kernel {ly.kernel!r}")
            if ly.pooling not in (MAX_POOL, CLUSTER_POOL):
                raise ConfigurationError(f"{tag}: unknown pooling {ly.pooling!r}")
            if min(ly.n_centroids, ly.k, ly.m) < 1:
                raise ConfigurationError(f"{tag}: C, k and m must be positive")
            if ly.pooling == CLUSTER_POOL:
                c = math.isqrt(ly.k // 2)
                if 2 * c * c != ly.k:
                    raise ConfigurationError(f"{tag}: rule k = 2*c^2 violated by k={ly.k}")
                if c < 2:
                    raise ConfigurationError(f"{tag}: cluster pooling needs c >= 2 (k >= 8), got k={ly.k}")
            if prev_c is not None:
                if ly.n_centroids > prev_c:
                    raise ConfigurationError(f"{tag}: rule 'C non-increasing' violated")
                if ly.k > prev_c:
                    raise ConfigurationError(f"{tag}: k={ly.k} exceeds the {prev_c} points left")
            prev_c = ly.n_centroids
        if self.head not in (CLASSIFY, SEGMENT):
            raise ConfigurationError(f"unknown head {self.head!r}")
        if self.head == CLASSIFY and self.layers[-1].n_centroids != 1:
            raise ConfigurationError("rule 'final layer C = 1 for classification' violated")
        if self.graph_source not in ("spatial", "features"):
            raise ConfigurationError(f"unknown graph source {self.graph_source!r}")
        if not 0.0 < self.keep_prob <= 1.0:
            raise ConfigurationError("dropout keep probability must be in (0, 1]")
        return self

    def to_dict(self):
        d = asdict(self)
        d["layers"] = [asdict(ly) for ly in self.layers]
        d["weight_scheme"] = {"kind": self.weight_scheme.kind, "sigma": self.weight_scheme.sigma}
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["layers"] = tuple(LayerSpec(**ly) for ly in d["layers"])
        d["fc"] = tuple(d["fc"])
        d["weight_scheme"] = WeightScheme(**d["weight_scheme"])
        return cls(**d)


_TABLE1 = {
    "1k": {
        "3l": ((512, 128, 1), (64, 64, 128), (128, 256, 1024)),
        "4l": ((512, 128, 32, 1), (32, 32, 8, 32), (128, 256, 512, 1024)),
    },
    "2k": {
        "3l": ((1024, 256, 1), (64, 64, 256), (128, 256, 1024)),
        "4l": ((1024, 256, 64, 1), (32, 32, 8, 64), (128, 256, 512, 1024)),
    },
}

VARIANTS = {
    "3l-pointnet++": ("3l", POINT_MLP, MAX_POOL),
    "4l-pointnet++": ("4l", POINT_MLP, MAX_POOL),
    "4l-spec-max": ("4l", SPEC_CONV, MAX_POOL),
    "4l-spec-cp": ("4l", SPEC_CONV, CLUSTER_POOL),
}


def _global_pooling(pooling, n_centroids, k):
    # a global layer whose k has no cluster size falls back to max pooling
    if pooling == CLUSTER_POOL and n_centroids == 1 and 2 * math.isqrt(k // 2) ** 2 != k:
        return MAX_POOL
    return pooling


def table1_arch(variant, scale="1k", n_classes=40, **kw):
    """Full-size classification architectures."""
    depth, kernel, pooling = VARIANTS[variant]
    cs, ks, ms = _TABLE1[scale][depth]
    lys = tuple(LayerSpec(c, k, m, kernel, _global_pooling(pooling, c, k)) for c, k, m in zip(cs, ks, ms))
    return ArchSpec(f"{variant}-{scale}", lys, CLASSIFY, n_classes, **kw).validate()


def scaled_arch(variant, n_out, head=CLASSIFY, centroids=(64, 16), widths=(64, 128, 256),
                ks=(32, 8), **kw):
    """Desk-scale version of a 4l variant.

    Two sampled layers (cluster pooling where the variant uses it) and a
    global layer over all remaining points. The global layer uses cluster
    pooling only when its size has the ``2 c^2`` form.
    """
    _, kernel, pooling = VARIANTS[variant]
    lys = [LayerSpec(c, k, m, kernel, pooling) for c, k, m in zip(centroids, ks, widths)]
    last = centroids[-1]
    lys.append(LayerSpec(1, last, widths[len(centroids)], kernel, _global_pooling(pooling, 1, last)))
    return ArchSpec(f"{variant}-scaled", tuple(lys), head, n_out, **kw).validate()


def layer_input_width(arch, i):
    return arch.dim + (arch.in_features if i == 0 else arch.layers[i - 1].m)


# ---------------------------------------------------------------------------
# parameters


@dataclass
class NetworkState:
    arch: ArchSpec
    params: dict
    buffers: dict
    step: int = 0

    def n_parameters(self):
        return int(sum(p.size for p in self.params.values()))

    def copy(self):
        return NetworkState(
            self.arch,
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.buffers.items()},
            self.step,
        )


def _glorot(rng, n_in, n_out):
    s = math.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-s, s, size=(n_in, n_out))


def _fc_stack(arch):
    """``(name, n_in, n_out, batch_norm)`` for every dense layer of the head."""
    out = []
    if arch.head == CLASSIFY:
        n_in = arch.layers[-1].m
        for j, h in enumerate(arch.fc):
            out.append((f"fc{j + 1}", n_in, h, True))
            n_in = h
        out.append(("out", n_in, arch.n_out, False))
    else:
        n_in = fp_widths(arch)[-1][1]
        out.append(("seg1", n_in, arch.seg_hidden, True))
        out.append(("out", arch.seg_hidden, arch.n_out, False))
    return out


def fp_widths(arch):
    """``(input width, output width)`` of each FP layer, deepest first."""
    ms = [ly.m for ly in arch.layers]
    widths = []
    cur = ms[-1]
    for lvl in range(len(ms) - 1, -1, -1):
        skip = ms[lvl - 1] if lvl >= 1 else arch.dim + arch.in_features
        out = ms[max(lvl - 1, 0)]
        widths.append((cur + skip, out))
        cur = out
    return widths


def build_network(arch, seed=0):
    """Fresh parameters, deterministic in ``seed``."""
    arch.validate()
    rng = np.random.default_rng(seed)
    params, buffers = {}, {}
    for i, ly in enumerate(arch.layers):
        n_in = layer_input_width(arch, i)
        if ly.kernel == SPEC_CONV:
            params[f"L{i + 1}.g"] = np.ones(ly.k)
        params[f"L{i + 1}.w"] = _glorot(rng, n_in, ly.m)
        params[f"L{i + 1}.b"] = np.zeros(ly.m)
    if arch.head == SEGMENT:
        for j, (n_in, n_out) in enumerate(fp_widths(arch)):
            params[f"fp{j + 1}.w"] = _glorot(rng, n_in, n_out)
            params[f"fp{j + 1}.b"] = np.zeros(n_out)
    for name, n_in, n_out, bn in _fc_stack(arch):
        params[f"{name}.w"] = _glorot(rng, n_in, n_out)
        params[f"{name}.b"] = np.zeros(n_out)
        if bn:
            params[f"{name}.gamma"] = np.ones(n_out)
            params[f"{name}.beta"] = np.zeros(n_out)
            buffers[f"{name}.mean"] = np.zeros(n_out)
            buffers[f"{name}.var"] = np.ones(n_out)
    return NetworkState(arch, params, buffers, 0)


# ---------------------------------------------------------------------------
# dense + batch norm + ReLU + dropout


@dataclass
class DenseTape:
    x: np.ndarray
    xhat: Optional[np.ndarray]
    inv_std: Optional[np.ndarray]
    pre_relu: np.ndarray
    mask: Optional[np.ndarray]


def dense_layer(x, w, b, bn=None, keep_prob=1.0, mode="eval", rng=None, momentum=0.5):
    """Affine, optional batch norm, ReLU, then inverted dropout in training.

    ``bn`` is ``(gamma, beta, running_mean, running_var)``; running
    statistics are updated in place in train mode as
    ``r = momentum * r + (1 - momentum) * batch_stat``.
    """
    x = np.asarray(x, dtype=np.float64)
    z = x @ w + b
    xhat = inv_std = None
    if bn is not None:
        gamma, beta, rmean, rvar = bn
        if mode == "train":
            if z.shape[0] < 2:
                raise InputError("batch norm needs a batch of at least 2 in train mode")
            mu = z.mean(axis=0)
            var = z.var(axis=0)
            rmean *= momentum
            rmean += (1.0 - momentum) * mu
            rvar *= momentum
            rvar += (1.0 - momentum) * var
        else:
            mu, var = rmean, rvar
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (z - mu) * inv_std
        z = gamma * xhat + beta
    a = np.maximum(z, 0.0)
    mask = None
    if mode == "train" and keep_prob < 1.0:
        mask = (rng.random(a.shape) < keep_prob) / keep_prob
        a = a * mask
    return a, DenseTape(x, xhat, inv_std, z, mask)


def dense_backward(grad, tape, w, gamma=None):
    """Returns ``(grad_x, grad_w, grad_b, grad_gamma, grad_beta)``."""
    if tape.mask is not None:
        grad = grad * tape.mask
    gz = np.where(tape.pre_relu > 0.0, grad, 0.0)
    g_gamma = g_beta = None
    if tape.xhat is not None:
        g_gamma = (gz * tape.xhat).sum(axis=0)
        g_beta = gz.sum(axis=0)
        gxh = gz * gamma
        n = gxh.shape[0]
        gz = tape.inv_std / n * (n * gxh - gxh.sum(axis=0) - tape.xhat * (gxh * tape.xhat).sum(axis=0))
    return gz @ w.T, tape.x.T @ gz, gz.sum(axis=0), g_gamma, g_beta


# ---------------------------------------------------------------------------
# geometry


@dataclass
class LayerGeometry:
    members: np.ndarray  # (B, C, k) indices into the previous level
    coords: np.ndarray  # (B, C, d) centroid coordinates
    rel: np.ndarray  # (B, C, k, d)
    basis: Optional[np.ndarray] = None  # (B, C, k, k)
    plan: Optional[L.ClusterPlan] = None


@dataclass
class Geometry:
    layers: list
    interp: list = field(default_factory=list)  # FP matrices, deepest first

    def take(self, idx):
        """Sub-batch of clouds ``idx``."""
        idx = np.asarray(idx)
        out = []
        for lg in self.layers:
            plan = None
            if lg.plan is not None:
                stages = [L.PoolStage(s.order[idx], s.count_in, s.mode) for s in lg.plan.stages]
                plan = L.ClusterPlan(stages, lg.plan.terminal_mode)
            out.append(LayerGeometry(
                lg.members[idx], lg.coords[idx], lg.rel[idx],
                None if lg.basis is None else lg.basis[idx], plan,
            ))
        return Geometry(out, [s[idx] for s in self.interp])

    @staticmethod
    def concat(parts):
        first = parts[0]
        out = []
        for i, lg in enumerate(first.layers):
            each = [p.layers[i] for p in parts]
            plan = None
            if lg.plan is not None:
                stages = [
                    L.PoolStage(np.concatenate([e.plan.stages[s].order for e in each]), st.count_in, st.mode)
                    for s, st in enumerate(lg.plan.stages)
                ]
                plan = L.ClusterPlan(stages, lg.plan.terminal_mode)
            out.append(LayerGeometry(
                np.concatenate([e.members for e in each]),
                np.concatenate([e.coords for e in each]),
                np.concatenate([e.rel for e in each]),
                None if lg.basis is None else np.concatenate([e.basis for e in each]),
                plan,
            ))
        interp = [np.concatenate([p.interp[j] for p in parts]) for j in range(len(first.interp))]
        return Geometry(out, interp)


def compute_geometry(arch, coords, sweeps_fn=None):
    """Sampling, grouping and spectral structure for a batch ``coords (B, N, d)``."""
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim == 2:
        coords = coords[None]
    b, n, d = coords.shape
    if d != arch.dim:
        raise InputError(f"architecture expects {arch.dim}-D points, got {d}-D")
    if n < arch.layers[0].k:
        raise InputError(f"cloud has {n} points, first layer needs k={arch.layers[0].k}")
    spatial = arch.graph_source == "spatial"
    out = []
    level = coords
    levels = [coords]
    for ly in arch.layers:
        cents = np.stack([fps(level[i], ly.n_centroids) for i in range(b)])
        members = np.stack([knn_many(level[i], cents[i], ly.k) for i in range(b)])
        ccoords = np.take_along_axis(level, cents[..., None], axis=1)
        grouped = np.take_along_axis(level[:, None, :, :], members[..., None], axis=2)
        rel = grouped - ccoords[:, :, None, :]
        lg = LayerGeometry(members, ccoords, rel)
        c, k = members.shape[1:]
        if spatial and (ly.kernel == SPEC_CONV or ly.pooling == CLUSTER_POOL):
            gb = build_graphs(rel.reshape(b * c, k, d), arch.weight_scheme, sweeps_fn)
            basis = gb.basis.reshape(b, c, k, k)
            if ly.kernel == SPEC_CONV:
                lg.basis = basis
            if ly.pooling == CLUSTER_POOL:
                lg.plan = L.cluster_plan(rel, ly.csize, arch.weight_scheme, basis, sweeps_fn)
        out.append(lg)
        level = ccoords
        levels.append(level)
    interp = []
    if arch.head == SEGMENT:
        for lvl in range(len(arch.layers), 0, -1):
            interp.append(L.interpolation_matrix(levels[lvl], levels[lvl - 1]))
    return Geometry(out, interp)


def compute_geometry_chunked(arch, coords, chunk=32, sweeps_fn=None):
    parts = [compute_geometry(arch, coords[i:i + chunk], sweeps_fn) for i in range(0, len(coords), chunk)]
    return Geometry.concat(parts)


# ---------------------------------------------------------------------------
# forward / backward


@dataclass
class Tape:
    layer_tapes: list = field(default_factory=list)
    head_tapes: list = field(default_factory=list)
    fp_tapes: list = field(default_factory=list)
    level_sizes: list = field(default_factory=list)
    fp_grads: Optional[dict] = None
    geometry: Optional[Geometry] = None


def _gather_rows(feats, members):
    """``feats (B, N, f)`` gathered by ``members (B, C, k)`` -> ``(B, C, k, f)``."""
    b = feats.shape[0]
    return feats[np.arange(b)[:, None, None], members]


def _scatter_rows(grad, members, n):
    b, c, k, f = grad.shape
    out = np.zeros((b * n, f))
    flat = (members + (np.arange(b) * n)[:, None, None]).reshape(-1)
    np.add.at(out, flat, grad.reshape(-1, f))
    return out.reshape(b, n, f)


def _encode(state, geom, coords, feats, mode):
    arch, P = state.arch, state.params
    b = coords.shape[0]
    prev = feats if feats is not None else np.zeros(coords.shape[:2] + (0,))
    tape = Tape()
    level_feats = [prev]
    for i, (ly, lg) in enumerate(zip(arch.layers, geom.layers)):
        name = f"L{i + 1}"
        tape.level_sizes.append(prev.shape[1])
        x = np.concatenate([lg.rel, _gather_rows(prev, lg.members)], axis=-1)
        basis = lg.basis
        if ly.kernel == SPEC_CONV:
            if basis is None:
                c, k = lg.members.shape[1:]
                basis = build_graphs(x.reshape(b * c, k, -1), arch.weight_scheme).basis.reshape(b, c, k, k)
            y, kt = L.spectral_conv_forward(x, basis, L.SpecConvParams(P[f"{name}.g"], P[f"{name}.w"]))
            h, z = L.relu_forward(y + P[f"{name}.b"])
            ktape = (kt, z)
        else:
            h, ktape = L.point_mlp_forward(x, P[f"{name}.w"], P[f"{name}.b"])
        if ly.pooling == CLUSTER_POOL:
            if lg.plan is not None:
                pooled, pt = L.cluster_pool_apply(h, lg.plan, ly.csize)
            else:
                pooled, pt = L.cluster_pool_forward(h, None, L.PoolSpec(ly.csize), arch.weight_scheme,
                                                    use_features=True)
        else:
            pooled, pt = L.max_pool_set(h)
        prev = pooled[:, :, 0, :]
        level_feats.append(prev)
        tape.layer_tapes.append((ktape, pt, h.shape[-2]))
    return level_feats, tape


def _encode_backward(state, geom, tape, grad_top, grads):
    arch, P = state.arch, state.params
    g = grad_top
    for i in range(len(arch.layers) - 1, -1, -1):
        ly, lg = arch.layers[i], geom.layers[i]
        name = f"L{i + 1}"
        ktape, pt, k = tape.layer_tapes[i]
        gp = g[:, :, None, :]
        if ly.pooling == CLUSTER_POOL:
            gh = L.cluster_pool_backward(gp, pt)
        else:
            gh = L.max_pool_backward(gp, pt, k)
        if ly.kernel == SPEC_CONV:
            kt, z = ktape
            gy = L.relu_backward(gh, z)
            grads[f"{name}.b"] = L._flat(gy).sum(axis=0)
            gx, gg, gw = L.spectral_conv_backward(gy, kt, L.SpecConvParams(P[f"{name}.g"], P[f"{name}.w"]))
            grads[f"{name}.g"] = gg
            grads[f"{name}.w"] = gw
        else:
            gx, gw, gb = L.point_mlp_backward(gh, ktape, P[f"{name}.w"])
            grads[f"{name}.w"] = gw
            grads[f"{name}.b"] = gb
        if i == 0:
            break
        gfeat = gx[..., arch.dim:]
        g = _scatter_rows(gfeat, lg.members, tape.level_sizes[i])
        # grad wrt level i features; combined with any FP contribution by the caller
        if tape.fp_grads is not None:
            g = g + tape.fp_grads.get(i, 0.0)
    return grads


def _head_forward(state, x, mode, rng, momentum):
    P, B = state.params, state.buffers
    arch = state.arch
    tapes = []
    for name, _, _, bn in _fc_stack(arch):
        if name == "out":
            tapes.append(("out", x))
            x = x @ P["out.w"] + P["out.b"]
            break
        bnp = (P[f"{name}.gamma"], P[f"{name}.beta"], B[f"{name}.mean"], B[f"{name}.var"]) if bn else None
        x, t = dense_layer(x, P[f"{name}.w"], P[f"{name}.b"], bnp, arch.keep_prob, mode, rng, momentum)
        tapes.append((name, t))
    return x, tapes


def _head_backward(state, tapes, g, grads):
    P = state.params
    for name, t in reversed(tapes):
        if name == "out":
            grads["out.w"] = t.T @ g
            grads["out.b"] = g.sum(axis=0)
            g = g @ P["out.w"].T
            continue
        gx, gw, gb, ggam, gbet = dense_backward(g, t, P[f"{name}.w"], P.get(f"{name}.gamma"))
        grads[f"{name}.w"], grads[f"{name}.b"] = gw, gb
        if ggam is not None:
            grads[f"{name}.gamma"], grads[f"{name}.beta"] = ggam, gbet
        g = gx
    return g


def forward(state, coords, feats=None, mode="eval", rng=None, geometry=None, momentum=0.5):
    """Batched forward pass.

    ``coords (B, N, d)``, ``feats (B, N, f)`` or None. Returns
    ``(logits, tape)``: logits are ``(B, n_out)`` for classification and
    ``(B, N, n_out)`` for segmentation.
    """
    arch = state.arch
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim == 2:
        coords = coords[None]
        if feats is not None:
            feats = np.asarray(feats, dtype=np.float64)[None]
    if feats is not None:
        feats = np.asarray(feats, dtype=np.float64)
        if feats.shape[-1] != arch.in_features:
            raise InputError(f"expected {arch.in_features} feature channels, got {feats.shape[-1]}")
    elif arch.in_features:
        raise InputError(f"architecture expects {arch.in_features} feature channels")
    if mode == "train" and arch.keep_prob < 1.0 and rng is None:
        raise ConfigurationError("train mode needs a random generator for dropout")
    if geometry is None:
        geometry = compute_geometry(arch, coords)
    level_feats, tape = _encode(state, geometry, coords, feats, mode)
    tape.geometry = geometry
    if arch.head == CLASSIFY:
        logits, tape.head_tapes = _head_forward(state, level_feats[-1][:, 0, :], mode, rng, momentum)
        return logits, tape
    b, n = coords.shape[:2]
    cur = level_feats[-1]
    P = state.params
    nl = len(arch.layers)
    for j, s in enumerate(geometry.interp):
        lvl = nl - 1 - j  # fine level index
        if lvl >= 1:
            skip = level_feats[lvl]
        else:
            skip = coords if feats is None else np.concatenate([coords, feats], axis=-1)
        cur, t = L.fp_interpolate(None, cur, None, skip, P[f"fp{j + 1}.w"], P[f"fp{j + 1}.b"], interp=s)
        tape.fp_tapes.append(t)
    flat = cur.reshape(b * n, -1)
    logits, tape.head_tapes = _head_forward(state, flat, mode, rng, momentum)
    return logits.reshape(b, n, -1), tape


def backward(state, tape, grad_logits):
    """Parameter gradients for ``d loss / d logits``."""
    arch, P = state.arch, state.params
    grads = {}
    if arch.head == CLASSIFY:
        g = _head_backward(state, tape.head_tapes, grad_logits, grads)
        return _encode_backward(state, tape.geometry, tape, g[:, None, :], grads)
    b, n = grad_logits.shape[:2]
    g = _head_backward(state, tape.head_tapes, grad_logits.reshape(b * n, -1), grads).reshape(b, n, -1)
    nl = len(arch.layers)
    skip_grads = {}
    for j in range(len(tape.fp_tapes) - 1, -1, -1):
        gc, gskip, gw, gb = L.fp_backward(g, tape.fp_tapes[j], P[f"fp{j + 1}.w"])
        grads[f"fp{j + 1}.w"], grads[f"fp{j + 1}.b"] = gw, gb
        lvl = nl - 1 - j
        if lvl >= 1:
            skip_grads[lvl] = gskip
        g = gc
    # g is now the gradient wrt the deepest encoder features
    tape.fp_grads = skip_grads
    return _encode_backward(state, tape.geometry, tape, g, grads)


def forward_classify(state, cloud, mode="eval", rng=None):
    """Logits ``(n_classes,)`` for one :class:`~specpool.data_io.PointCloud`."""
    logits, tape = forward(state, cloud.coords, cloud.features, mode, rng)
    return (logits[0], tape) if mode == "train" else logits[0]


def forward_segment(state, cloud, mode="eval", rng=None):
    logits, tape = forward(state, cloud.coords, cloud.features, mode, rng)
    return (logits[0], tape) if mode == "train" else logits[0]


def n_parameters(arch):
    return build_network(arch, 0).n_parameters()


# ---------------------------------------------------------------------------
# checkpoints

CKPT_MAGIC = b"SPCKPT01"
CKPT_VERSION = 1


def save_checkpoint(path, state):
    """Write ``state`` as a byte-stable container.

    Layout: 8-byte magic, little-endian u32 version, u64 header length, a
    sorted-key JSON header, then every array as little-endian float64 in
    header order.
    """
    entries = []
    blobs = []
    offset = 0
    for group, d in (("params", state.params), ("buffers", state.buffers)):
        for name in sorted(d):
            a = np.ascontiguousarray(d[name], dtype="<f8")
            entries.append({"group": group, "name": name, "shape": list(a.shape), "offset": offset})
            blobs.append(a.tobytes())
            offset += a.nbytes
    header = json.dumps(
        {"arch": state.arch.to_dict(), "step": int(state.step), "entries": entries},
        sort_keys=True, separators=(",", ":"),
    ).encode()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<IQ", CKPT_VERSION, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != CKPT_MAGIC:
        raise InputError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<IQ", data, 8)
    if version != CKPT_VERSION:
        raise InputError(f"{path}: unsupported checkpoint version {version}")
    start = 8 + struct.calcsize("<IQ")
    header = json.loads(data[start:start + hlen])
    base = start + hlen
    params, buffers = {}, {}
    for e in header["entries"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        a = np.frombuffer(data, dtype="<f8", count=count, offset=base + e["offset"])
        a = a.reshape(e["shape"]).astype(np.float64)
        (params if e["group"] == "params" else buffers)[e["name"]] = a
    return NetworkState(ArchSpec.from_dict(header["arch"]), params, buffers, header["step"])


def with_scheme(arch, scheme):
    return replace(arch, weight_scheme=scheme)
