"""Optimizer, schedules, loss, augmentation, metrics and the train/eval loop."""

import logging
import math
import os
import time
from contextlib import nullcontext
from dataclasses import dataclass, field

import numpy as np

from . import model as M
from .data_io import PointCloud
from .errors import ConfigurationError, InputError

log = logging.getLogger(__name__)

METRICS_HEADER = "epoch,lr,train_loss,train_acc,test_metric,seconds"


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params, grads, state, lr):
    """One bias-corrected Adam update, in place on ``params`` and ``state``."""
    for name, g in grads.items():
        if params[name].shape != g.shape:
            raise ConfigurationError(f"gradient for {name} has shape {g.shape}, expected {params[name].shape}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for name in sorted(grads):
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(params[name])
            state.v[name] = np.zeros_like(params[name])
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        params[name] -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


# ---------------------------------------------------------------------------
# schedules


@dataclass
class TrainConfig:
    epochs: int = 50
    seed: int = 0
    base_lr: float = 0.001
    lr_decay: float = 0.5
    decay_every: int = 20
    batch_size: int = 32
    bn_momentum_start: float = 0.5
    bn_momentum_max: float = 0.99
    augment: tuple = ()
    deterministic: bool = False
    threads: int = 0
    eval_batch: int = 64

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError("epochs must be at least 1")
        if self.batch_size < 1 or self.decay_every < 1:
            raise ConfigurationError("batch_size and decay_every must be positive")
        if self.base_lr < 0:
            raise ConfigurationError("learning rate must be non-negative")
        bad = set(self.augment) - set(AUGMENTATIONS)
        if bad:
            raise ConfigurationError(f"unknown augmentations {sorted(bad)}; valid: {list(AUGMENTATIONS)}")


def lr_at(epoch, cfg=None):
    cfg = cfg or TrainConfig()
    return cfg.base_lr * cfg.lr_decay ** (epoch // cfg.decay_every)


def bn_momentum_at(epoch, cfg=None):
    """Staircase from 0.5 toward 0.99, stepping with the learning-rate decay."""
    cfg = cfg or TrainConfig()
    gap = 1.0 - cfg.bn_momentum_start
    return min(cfg.bn_momentum_max, 1.0 - gap * 0.5 ** (epoch // cfg.decay_every))


# ---------------------------------------------------------------------------
# augmentation

AUGMENTATIONS = ("rotate", "perturb", "jitter", "scale", "translate")
UP_AXIS = 1


def _axis_rotation(axis, angle):
    c, s = math.cos(angle), math.sin(angle)
    i, j = [a for a in range(3) if a != axis]
    r = np.eye(3)
    r[i, i] = c
    r[j, j] = c
    r[i, j] = -s
    r[j, i] = s
    return r


def augment(cloud, seed, switches=AUGMENTATIONS):
    """Random rotation about the up (y) axis, small per-axis rotations, jitter,
    scaling and translation, applied in that order for each enabled switch.

    ``seed`` may be an int or a ``numpy.random.Generator``. Normals in
    ``cloud.features`` (3 channels) are rotated with the points; other
    feature widths are left alone.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    switches = set(switches)
    pts = cloud.coords.copy()
    feats = None if cloud.features is None else cloud.features.copy()
    rotate_feats = feats is not None and feats.shape[1] == 3 and pts.shape[1] == 3
    rot = np.eye(pts.shape[1])
    if pts.shape[1] == 3:
        if "rotate" in switches:
            rot = _axis_rotation(UP_AXIS, rng.uniform(0.0, 2 * math.pi)) @ rot
        if "perturb" in switches:
            angles = np.clip(rng.normal(0.0, 0.06, size=3), -0.18, 0.18)
            for ax in (0, 1, 2):
                rot = _axis_rotation(ax, angles[ax]) @ rot
    if not np.array_equal(rot, np.eye(len(rot))):
        pts = pts @ rot.T
        if rotate_feats:
            feats = feats @ rot.T
    if "jitter" in switches:
        pts = pts + np.clip(rng.normal(0.0, 0.01, size=pts.shape), -0.05, 0.05)
    if "scale" in switches:
        pts = pts * rng.uniform(0.8, 1.25)
    if "translate" in switches:
        pts = pts + rng.uniform(-0.1, 0.1, size=pts.shape[1])
    return PointCloud(pts, feats, cloud.labels)


# ---------------------------------------------------------------------------
# loss and metrics


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy over rows; returns ``(loss, d loss / d logits)``.

    Accepts ``(B, C)`` or ``(B, N, C)`` logits with matching integer labels.
    """
    logits = np.asarray(logits, dtype=np.float64)
    shape = logits.shape
    z = logits.reshape(-1, shape[-1])
    y = np.asarray(labels).reshape(-1)
    if y.shape[0] != z.shape[0]:
        raise InputError("labels do not match logits")
    zmax = z.max(axis=1, keepdims=True)
    shifted = z - zmax
    lse = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(z.shape[0])
    loss = float((lse - shifted[rows, y]).mean())
    prob = np.exp(shifted - lse[:, None])
    prob[rows, y] -= 1.0
    return loss, (prob / z.shape[0]).reshape(shape)


def classification_metrics(pred, labels, n_classes):
    """Instance accuracy and mean per-class accuracy (absent classes skipped)."""
    pred = np.asarray(pred)
    labels = np.asarray(labels)
    inst = float((pred == labels).mean()) if labels.size else 0.0
    accs = [float((pred[labels == c] == c).mean()) for c in range(n_classes) if np.any(labels == c)]
    return {"instance_acc": inst, "class_acc": float(np.mean(accs)) if accs else 0.0}


def shape_iou(pred, labels, n_parts):
    """Mean IoU over part labels for one shape; an empty union counts as 1."""
    ious = []
    for p in range(n_parts):
        inter = np.sum((pred == p) & (labels == p))
        union = np.sum((pred == p) | (labels == p))
        ious.append(1.0 if union == 0 else inter / union)
    return float(np.mean(ious))


def mean_iou(preds, labels, n_parts):
    return float(np.mean([shape_iou(p, l, n_parts) for p, l in zip(preds, labels)]))


# ---------------------------------------------------------------------------
# train / eval


def _blas_limit(cfg):
    n = 1 if cfg.deterministic else (cfg.threads or None)
    if n is None:
        return nullcontext()
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return nullcontext()
    return threadpool_limits(limits=n)


def _batches(order, size):
    out = [order[i:i + size] for i in range(0, len(order), size)]
    if len(out) > 1 and len(out[-1]) < 2:
        # batch norm needs two items
        out[-2] = np.concatenate([out[-2], out[-1]])
        out.pop()
    return out


def _targets(dataset, idx):
    if dataset.task == "segment":
        return np.stack([dataset.clouds[i].labels for i in idx])
    return dataset.labels[idx]


class GeometryCache:
    """Per-dataset geometry, computed once and sliced per batch."""

    def __init__(self, arch, dataset, chunk=32):
        self.coords, self.feats = dataset.arrays()
        self.geom = None
        if arch.graph_source == "spatial":
            self.geom = M.compute_geometry_chunked(arch, self.coords, chunk)

    def batch(self, idx):
        g = None if self.geom is None else self.geom.take(idx)
        f = None if self.feats is None else self.feats[idx]
        return self.coords[idx], f, g


def predict(state, dataset, cache=None, batch=64):
    """Eval-mode predictions: class per cloud or label per point."""
    cache = cache or GeometryCache(state.arch, dataset)
    out = []
    for i in range(0, len(dataset), batch):
        idx = np.arange(i, min(i + batch, len(dataset)))
        coords, feats, geom = cache.batch(idx)
        logits, _ = M.forward(state, coords, feats, "eval", geometry=geom)
        out.append(np.argmax(logits, axis=-1))
    return np.concatenate(out)


def evaluate(state, dataset, task=None, cache=None):
    """Classification: instance and class accuracy. Segmentation: mIoU and point accuracy."""
    task = task or dataset.task
    pred = predict(state, dataset, cache)
    if task == "segment":
        labels = dataset.point_labels()
        return {"miou": mean_iou(pred, labels, len(dataset.class_names)),
                "point_acc": float((pred == labels).mean())}
    return classification_metrics(pred, dataset.labels, len(dataset.class_names))


def test_metric(metrics):
    return metrics["miou"] if "miou" in metrics else metrics["instance_acc"]


@dataclass
class TrainResult:
    state: M.NetworkState
    rows: list
    final: dict
    epoch_seconds: list


def _fmt(x):
    return repr(float(x))


def train(cfg, arch, train_set, test_set=None, out_dir=None, state=None):
    """Train ``arch`` on ``train_set``; evaluate on ``test_set`` after every epoch.

    Writes ``metrics.csv`` and ``model.ckpt`` under ``out_dir`` when given.
    In deterministic mode BLAS runs single-threaded and the ``seconds``
    column is written as 0 so the file is byte-stable; wall times then go to
    ``timing.csv``.
    """
    if len(train_set) == 0:
        raise InputError("training set is empty")
    if train_set.task != ("segment" if arch.head == M.SEGMENT else "classify"):
        raise ConfigurationError(f"dataset task {train_set.task!r} does not match head {arch.head!r}")
    state = state or M.build_network(arch, cfg.seed)
    opt = AdamState()
    rows = []
    times = []
    final = {}
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    with _blas_limit(cfg):
        cached = not cfg.augment
        tr_cache = GeometryCache(arch, train_set) if cached else None
        te_cache = GeometryCache(arch, test_set) if test_set is not None else None
        for epoch in range(cfg.epochs):
            t0 = time.perf_counter()
            lr = lr_at(epoch, cfg)
            mom = bn_momentum_at(epoch, cfg)
            order = np.random.default_rng([cfg.seed, epoch, 0]).permutation(len(train_set))
            drop_rng = np.random.default_rng([cfg.seed, epoch, 1])
            aug_rng = np.random.default_rng([cfg.seed, epoch, 2])
            tot_loss = tot_correct = tot_count = 0.0
            for idx in _batches(order, cfg.batch_size):
                if cached:
                    coords, feats, geom = tr_cache.batch(idx)
                else:
                    clouds = [augment(train_set.clouds[i], aug_rng, cfg.augment) for i in idx]
                    coords = np.stack([c.coords for c in clouds])
                    feats = None if clouds[0].features is None else np.stack([c.features for c in clouds])
                    geom = M.compute_geometry(arch, coords)
                y = _targets(train_set, idx)
                logits, tape = M.forward(state, coords, feats, "train", drop_rng, geom, mom)
                loss, glog = cross_entropy(logits, y)
                grads = M.backward(state, tape, glog)
                adam_step(state.params, grads, opt, lr)
                state.step += 1
                n = len(idx)
                tot_loss += loss * n
                tot_correct += float((np.argmax(logits, axis=-1) == y).mean()) * n
                tot_count += n
            metric = float("nan")
            if test_set is not None:
                final = evaluate(state, test_set, cache=te_cache)
                metric = test_metric(final)
            secs = time.perf_counter() - t0
            times.append(secs)
            rows.append((epoch, lr, tot_loss / tot_count, tot_correct / tot_count, metric,
                         0.0 if cfg.deterministic else secs))
            log.info("epoch %d lr %.2e loss %.4f acc %.3f test %.4f (%.1fs)",
                     epoch, lr, rows[-1][2], rows[-1][3], metric, secs)
            if out_dir:
                write_metrics(os.path.join(out_dir, "metrics.csv"), rows)
                if cfg.deterministic:
                    with open(os.path.join(out_dir, "timing.csv"), "w") as fh:
                        fh.write("epoch,seconds\n")
                        for e, s in enumerate(times):
                            fh.write(f"{e},{s:.3f}\n")
    if out_dir:
        M.save_checkpoint(os.path.join(out_dir, "model.ckpt"), state)
    return TrainResult(state, rows, final, times)


def write_metrics(path, rows):
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(METRICS_HEADER + "\n")
        for r in rows:
            fh.write(",".join([str(int(r[0]))] + [_fmt(x) for x in r[1:]]) + "\n")
