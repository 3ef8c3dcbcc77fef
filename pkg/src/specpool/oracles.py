"""Slow, literal reference implementations used to cross-check the vectorized code."""

import numpy as np

from .graph_spectral import DEFAULT_SCHEME, build_graph


def _col_max(rows):
    out = list(rows[0])
    for r in rows[1:]:
        for j, v in enumerate(r):
            if v > out[j]:
                out[j] = v
    return out


def _col_mean(rows):
    out = list(rows[0])
    for r in rows[1:]:
        for j, v in enumerate(r):
            out[j] = out[j] + v
    return [v / len(rows) for v in out]


def literal_cluster_pool(x, coords, csize, scheme=DEFAULT_SCHEME, use_features=False):
    """Recursive cluster pooling written out one step at a time on Python lists.

    Graphs are built from the representatives' coordinates, which move to
    the mean of their cluster after every recurrence, or from the current
    features when ``use_features`` is set.
    """
    pts = [list(map(float, r)) for r in np.asarray(x)]
    crd = [list(map(float, r)) for r in np.asarray(x if use_features else coords)]
    pool = "max"
    while len(pts) > csize:
        graph = build_graph(np.array(pts if use_features else crd), scheme)
        fiedler = [float(v) for v in graph.basis[:, 1]]
        inds = sorted(range(len(pts)), key=lambda i: (fiedler[i], i))
        pts = [pts[i] for i in inds]
        crd = [crd[i] for i in inds]
        while len(pts) % csize:
            pts.append(pts[-1])
            crd.append(crd[-1])
        new_pts, new_crd = [], []
        for g in range(len(pts) // csize):
            grp = pts[g * csize:(g + 1) * csize]
            new_pts.append(_col_max(grp) if pool == "max" else _col_mean(grp))
            new_crd.append(_col_mean(crd[g * csize:(g + 1) * csize]))
        pts, crd = new_pts, new_crd
        pool = "avg" if pool == "max" else "max"
    final = _col_max(pts) if pool == "max" else _col_mean(pts)
    return np.array([final])


def triple_loop_matmul(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            s = 0.0
            for t in range(a.shape[1]):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def brute_knn(points, q, k):
    points = np.asarray(points, dtype=np.float64)
    d = [(float(np.sum((points[i] - points[q]) ** 2)), i) for i in range(len(points))]
    return [i for _, i in sorted(d)[:k]]
