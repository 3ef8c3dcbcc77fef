"""Farthest point sampling and k-NN neighborhood grouping."""

from dataclasses import dataclass

import numpy as np

from .errors import InputError


@dataclass
class Neighborhood:
    centroid_index: int
    member_indices: np.ndarray
    rel_coords: np.ndarray
    features: np.ndarray


def lexmin_index(points):
    """Index of the lexicographically smallest row (ties -> lowest index)."""
    points = np.asarray(points, dtype=np.float64)
    # np.lexsort sorts by the last key first and is stable
    return int(np.lexsort(points.T[::-1])[0])


def fps(points, m_centroids):
    """Greedy farthest point sampling.

    Seeds with the lexicographically smallest point so the selection depends
    only on the point set, not on its storage order. Distance ties go to the
    lowest index.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if not 1 <= m_centroids <= n:
        raise InputError(f"cannot sample {m_centroids} centroids from {n} points")
    chosen = np.empty(m_centroids, dtype=np.int64)
    chosen[0] = lexmin_index(points)
    mind = ((points - points[chosen[0]]) ** 2).sum(axis=1)
    for i in range(1, m_centroids):
        nxt = int(np.argmax(mind))
        chosen[i] = nxt
        d = ((points - points[nxt]) ** 2).sum(axis=1)
        np.minimum(mind, d, out=mind)
    return chosen


def knn_many(points, query_indices, k):
    """k nearest neighbors of several query points, each row sorted by (distance, index)."""
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if k > n or k < 1:
        raise InputError(f"k={k} is out of range for {n} points")
    q = np.asarray(query_indices, dtype=np.int64)
    d2 = ((points[None, :, :] - points[q][:, None, :]) ** 2).sum(axis=2)
    if k < n:
        # partition first, then a stable sort of the candidates keeps the index tie-break
        part = np.argpartition(d2, k - 1, axis=1)[:, :k]
        kth = np.take_along_axis(d2, part, axis=1).max(axis=1, keepdims=True)
        # every point tied with the k-th distance must stay a candidate
        cand_mask = d2 <= kth
        if cand_mask.sum(axis=1).max() > k:
            order = np.argsort(d2, axis=1, kind="stable")
            return order[:, :k]
        part.sort(axis=1)
        sub = np.take_along_axis(d2, part, axis=1)
        order = np.argsort(sub, axis=1, kind="stable")
        return np.take_along_axis(part, order, axis=1)
    return np.argsort(d2, axis=1, kind="stable")


def knn(points, query_index, k):
    return knn_many(points, [query_index], k)[0]


def group(points, features, centroid_indices, k):
    """Build one :class:`Neighborhood` per centroid."""
    points = np.asarray(points, dtype=np.float64)
    if features is None:
        features = np.zeros((points.shape[0], 0))
    features = np.asarray(features, dtype=np.float64)
    if features.shape[0] != points.shape[0]:
        raise InputError("points and features disagree on the number of rows")
    centroid_indices = np.asarray(centroid_indices, dtype=np.int64)
    members = knn_many(points, centroid_indices, k)
    out = []
    for c, idx in zip(centroid_indices, members):
        out.append(
            Neighborhood(
                centroid_index=int(c),
                member_indices=idx,
                rel_coords=points[idx] - points[c],
                features=features[idx].copy(),
            )
        )
    return out
