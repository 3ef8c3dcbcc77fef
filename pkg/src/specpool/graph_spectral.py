"""Neighborhood graphs, normalized Laplacians and the graph Fourier basis.

Everything here has a batched form operating on stacks ``(n, k, d)`` of
neighborhoods, since the network builds one small graph per neighborhood
and solves them all together.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigurationError, InputError
from .linalg import jacobi_eigh_batch

GAUSSIAN = "gaussian_similarity"
RAW_DISTANCE = "raw_distance"


@dataclass(frozen=True)
class WeightScheme:
    kind: str = GAUSSIAN
    # None means "mean pairwise distance"
    sigma: Optional[float] = None

    def __post_init__(self):
        if self.kind not in (GAUSSIAN, RAW_DISTANCE):
            raise ConfigurationError(f"unknown weight scheme {self.kind!r}")
        if self.sigma is not None and not self.sigma > 0:
            raise ConfigurationError("gaussian sigma must be positive")

    @classmethod
    def parse(cls, text):
        """``gaussian``, ``gaussian:0.3``, or ``raw_distance``."""
        name, _, sig = text.partition(":")
        if name in ("gaussian", GAUSSIAN):
            return cls(GAUSSIAN, float(sig) if sig else None)
        if name in ("raw", RAW_DISTANCE):
            return cls(RAW_DISTANCE)
        raise ConfigurationError(f"unknown weight scheme {text!r}")


DEFAULT_SCHEME = WeightScheme()


@dataclass
class NeighborhoodGraph:
    w: np.ndarray
    degrees: np.ndarray
    laplacian: np.ndarray
    eigenvalues: np.ndarray
    basis: np.ndarray


def pairwise_distances(x):
    """Euclidean distances within each set of a stack ``(..., k, d)``."""
    x = np.asarray(x, dtype=np.float64)
    diff = x[..., :, None, :] - x[..., None, :, :]
    return np.sqrt((diff * diff).sum(axis=-1))


def adjacency_batch(x, scheme=DEFAULT_SCHEME):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise InputError(f"expected a stack (n, k, d), got shape {x.shape}")
    k = x.shape[1]
    if k < 1:
        raise InputError("a neighborhood needs at least one point")
    dist = pairwise_distances(x)
    if scheme.kind == RAW_DISTANCE:
        w = dist
    else:
        if scheme.sigma is not None:
            sigma = np.full(x.shape[0], float(scheme.sigma))
        elif k > 1:
            sigma = dist.sum(axis=(1, 2)) / (k * (k - 1))
            sigma = np.where(sigma > 0, sigma, 1.0)
        else:
            sigma = np.ones(x.shape[0])
        w = np.exp(-(dist * dist) / (sigma * sigma)[:, None, None])
    idx = np.arange(k)
    w[:, idx, idx] = 0.0
    return w


def adjacency(x, scheme=DEFAULT_SCHEME):
    """Symmetric, zero-diagonal weight matrix of one point set ``(k, d)``."""
    return adjacency_batch(np.asarray(x, dtype=np.float64)[None], scheme)[0]


def normalized_laplacian_batch(w):
    w = np.asarray(w, dtype=np.float64)
    deg = w.sum(axis=-1)
    # isolated vertices get a zero scaling, so their L row is the identity row
    with np.errstate(divide="ignore"):
        dis = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
    k = w.shape[-1]
    return np.eye(k) - dis[..., :, None] * w * dis[..., None, :], deg


def normalized_laplacian(w):
    """``I - D^-1/2 W D^-1/2`` for one adjacency matrix."""
    return normalized_laplacian_batch(np.asarray(w, dtype=np.float64)[None])[0][0]


@dataclass
class GraphBatch:
    """Stacked spectra of many neighborhood graphs."""

    w: np.ndarray
    degrees: np.ndarray
    laplacian: np.ndarray
    eigenvalues: np.ndarray
    basis: np.ndarray

    def __len__(self):
        return self.w.shape[0]

    def __getitem__(self, i):
        return NeighborhoodGraph(
            self.w[i], self.degrees[i], self.laplacian[i], self.eigenvalues[i], self.basis[i]
        )


def build_graphs(x, scheme=DEFAULT_SCHEME, sweeps_fn=None):
    """Adjacency, Laplacian and eigendecomposition for a stack ``(n, k, d)``."""
    w = adjacency_batch(x, scheme)
    lap, deg = normalized_laplacian_batch(w)
    vals, vecs = jacobi_eigh_batch(lap, sweeps_fn)
    return GraphBatch(w, deg, lap, vals, vecs)


def build_graph(x, scheme=DEFAULT_SCHEME):
    return build_graphs(np.asarray(x, dtype=np.float64)[None], scheme)[0]


def gft(u, x):
    """Forward graph Fourier transform ``U^T X``; broadcasts over stacks."""
    u = np.asarray(u, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if u.shape[-2] != x.shape[-2]:
        raise ConfigurationError(f"basis {u.shape} does not match signal {x.shape}")
    return np.swapaxes(u, -1, -2) @ x


def igft(u, xt):
    """Inverse graph Fourier transform ``U X~``."""
    u = np.asarray(u, dtype=np.float64)
    xt = np.asarray(xt, dtype=np.float64)
    if u.shape[-1] != xt.shape[-2]:
        raise ConfigurationError(f"basis {u.shape} does not match coefficients {xt.shape}")
    return u @ xt


def fiedler_order_batch(basis):
    """Ascending argsort of each basis' second column (ties -> lower index)."""
    basis = np.asarray(basis)
    if basis.shape[-1] < 2:
        raise InputError("Fiedler ordering needs at least two vertices")
    return np.argsort(basis[..., :, 1], axis=-1, kind="stable")


def fiedler_order(graph):
    return fiedler_order_batch(graph.basis[None])[0]


def spectral_coordinates(graph, count=3):
    """Eigenvector columns ``1..count`` (fewer if the graph is smaller)."""
    hi = min(count + 1, graph.basis.shape[1])
    return graph.basis[:, 1:hi]
