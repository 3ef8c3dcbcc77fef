"""Point cloud ingestion and synthetic datasets.

Formats: ASCII OFF meshes, whitespace ``x y z [nx ny nz] [label]`` text
clouds, and MNIST IDX files. Synthetic shape families provide desk-scale
classification and part-segmentation data.
"""

import gzip
import hashlib
import json
import math
import os
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InputError, ParseError


@dataclass
class PointCloud:
    coords: np.ndarray
    features: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.features is not None:
            self.features = np.asarray(self.features, dtype=np.float64)
            if self.features.shape[0] != self.coords.shape[0]:
                raise InputError("features and coordinates disagree on the number of points")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)

    def __len__(self):
        return self.coords.shape[0]


@dataclass
class Dataset:
    clouds: list
    # class index per cloud (classification) or None (per-point labels live in the clouds)
    labels: Optional[np.ndarray]
    class_names: list
    split: str = "train"
    task: str = "classify"

    def __len__(self):
        return len(self.clouds)

    def subset(self, idx, split=None):
        idx = list(idx)
        return Dataset(
            [self.clouds[i] for i in idx],
            None if self.labels is None else self.labels[idx],
            self.class_names, split or self.split, self.task,
        )

    def arrays(self):
        """Stacked ``(coords, features or None)``; needs equal point counts."""
        coords = np.stack([c.coords for c in self.clouds])
        if self.clouds[0].features is None:
            return coords, None
        return coords, np.stack([c.features for c in self.clouds])

    def point_labels(self):
        return np.stack([c.labels for c in self.clouds])

    def fingerprint(self):
        h = hashlib.sha256()
        for c in self.clouds:
            h.update(np.ascontiguousarray(c.coords).tobytes())
            if c.features is not None:
                h.update(np.ascontiguousarray(c.features).tobytes())
            if c.labels is not None:
                h.update(np.ascontiguousarray(c.labels).tobytes())
        if self.labels is not None:
            h.update(np.ascontiguousarray(self.labels, dtype=np.int64).tobytes())
        return h.hexdigest()


# ---------------------------------------------------------------------------
# OFF meshes


@dataclass
class Mesh:
    vertices: np.ndarray
    triangles: np.ndarray


def _content_lines(text):
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield no, line


def parse_off(text, path="<string>"):
    lines = _content_lines(text)
    try:
        no, line = next(lines)
    except StopIteration:
        raise ParseError("empty file", path) from None
    toks = line.split()
    if not toks[0].endswith("OFF"):
        raise ParseError(f"expected OFF header, got {toks[0]!r}", path, no)
    toks = toks[1:]
    if not toks:
        try:
            no, line = next(lines)
        except StopIteration:
            raise ParseError("missing element counts", path, no) from None
        toks = line.split()
    try:
        nv, nf = int(toks[0]), int(toks[1])
    except (ValueError, IndexError):
        raise ParseError(f"bad element counts {line!r}", path, no) from None
    if nv < 0 or nf < 0:
        raise ParseError("negative element counts", path, no)
    verts = np.empty((nv, 3))
    for i in range(nv):
        try:
            no, line = next(lines)
        except StopIteration:
            raise ParseError(f"expected {nv} vertices, found {i}", path) from None
        try:
            verts[i] = [float(t) for t in line.split()[:3]]
        except ValueError:
            raise ParseError(f"bad vertex {line!r}", path, no) from None
    tris = []
    for i in range(nf):
        try:
            no, line = next(lines)
        except StopIteration:
            raise ParseError(f"expected {nf} faces, found {i}", path) from None
        try:
            vals = [int(t) for t in line.split()]
            n = vals[0]
            idx = vals[1:1 + n]
        except (ValueError, IndexError):
            raise ParseError(f"bad face {line!r}", path, no) from None
        if n < 3 or len(idx) != n or min(idx) < 0 or max(idx) >= nv:
            raise ParseError(f"bad face {line!r}", path, no)
        for j in range(1, n - 1):
            tris.append((idx[0], idx[j], idx[j + 1]))
    return Mesh(verts, np.asarray(tris, dtype=np.int64).reshape(-1, 3))


def load_off(path):
    """Parse an ASCII OFF file; polygons are fan-triangulated."""
    with open(path, "r", encoding="ascii", newline="") as fh:
        return parse_off(fh.read(), path)


def triangle_areas(mesh):
    a, b, c = (mesh.vertices[mesh.triangles[:, i]] for i in range(3))
    cross = np.cross(b - a, c - a)
    return 0.5 * np.linalg.norm(cross, axis=1), cross


def normalize_cloud(coords):
    """Center at the centroid and scale to unit max radius; returns ``(coords, center, scale)``."""
    center = coords.mean(axis=0)
    out = coords - center
    r = np.sqrt((out * out).sum(axis=1)).max()
    scale = 1.0 / r if r > 0 else 1.0
    return out * scale, center, scale


def sample_mesh(mesh, n, seed=0, normals=False, normalize=True, return_faces=False):
    """Area-weighted uniform surface sample of ``n`` points."""
    areas, cross = triangle_areas(mesh)
    total = areas.sum()
    if not total > 0:
        raise InputError("mesh has zero surface area")
    rng = np.random.default_rng(seed)
    faces = rng.choice(len(areas), size=n, p=areas / total)
    u = rng.random(n)
    v = rng.random(n)
    flip = u + v > 1.0
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    tri = mesh.triangles[faces]
    a = mesh.vertices[tri[:, 0]]
    b = mesh.vertices[tri[:, 1]]
    c = mesh.vertices[tri[:, 2]]
    pts = a + u[:, None] * (b - a) + v[:, None] * (c - a)
    if normalize:
        pts = normalize_cloud(pts)[0]
    feats = None
    if normals:
        nrm = cross[faces]
        feats = nrm / np.maximum(np.linalg.norm(nrm, axis=1, keepdims=True), 1e-300)
    cloud = PointCloud(pts, feats)
    return (cloud, faces) if return_faces else cloud


# ---------------------------------------------------------------------------
# xyz text clouds


def parse_xyz(text, path="<string>"):
    rows = []
    width = None
    for no, line in _content_lines(text):
        toks = line.split()
        try:
            vals = [float(t) for t in toks]
        except ValueError:
            bad = next(t for t in toks if not _is_float(t))
            raise ParseError(f"non-numeric token {bad!r}", path, no) from None
        if len(vals) not in (3, 4, 6, 7):
            raise ParseError(f"expected 3, 4, 6 or 7 columns, got {len(vals)}", path, no)
        if width is None:
            width = len(vals)
        elif len(vals) != width:
            raise ParseError(f"column count changed from {width} to {len(vals)}", path, no)
        rows.append(vals)
    if not rows:
        return PointCloud(np.zeros((0, 3)))
    a = np.asarray(rows)
    feats = a[:, 3:6] if width >= 6 else None
    labels = None
    if width in (4, 7):
        lab = a[:, -1]
        if np.any(lab != np.round(lab)):
            raise ParseError("labels must be integers", path)
        labels = lab.astype(np.int64)
    return PointCloud(a[:, :3], feats, labels)


def _is_float(t):
    try:
        float(t)
    except ValueError:
        return False
    return True


def load_xyz(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_xyz(fh.read(), path)


def save_xyz(path, cloud):
    cols = [cloud.coords]
    if cloud.features is not None:
        cols.append(cloud.features)
    a = np.concatenate(cols, axis=1)
    with open(path, "w", encoding="utf-8") as fh:
        for i, row in enumerate(a):
            line = " ".join(repr(float(x)) for x in row)
            if cloud.labels is not None:
                line += f" {int(cloud.labels[i])}"
            fh.write(line + "\n")


# ---------------------------------------------------------------------------
# MNIST

IDX_IMAGES = 2051
IDX_LABELS = 2049


def _open_maybe_gz(path, mode="rb"):
    if str(path).endswith(".gz"):
        return gzip.open(path, mode)
    return open(path, mode)


def read_idx(path):
    """Read an MNIST IDX file (optionally gzipped) into a uint8 array."""
    with _open_maybe_gz(path) as fh:
        data = fh.read()
    if len(data) < 8:
        raise ParseError("truncated IDX header", path)
    magic = struct.unpack(">I", data[:4])[0]
    if magic == IDX_IMAGES:
        n, rows, cols = struct.unpack(">III", data[4:16])
        shape, off = (n, rows, cols), 16
    elif magic == IDX_LABELS:
        n = struct.unpack(">I", data[4:8])[0]
        shape, off = (n,), 8
    else:
        raise ParseError(f"unknown IDX magic number {magic}", path)
    need = int(np.prod(shape))
    if len(data) - off < need:
        raise ParseError(f"IDX payload truncated: need {need} bytes, have {len(data) - off}", path)
    return np.frombuffer(data, dtype=np.uint8, count=need, offset=off).reshape(shape)


def write_idx(path, array):
    array = np.asarray(array, dtype=np.uint8)
    if array.ndim == 3:
        head = struct.pack(">IIII", IDX_IMAGES, *array.shape)
    elif array.ndim == 1:
        head = struct.pack(">II", IDX_LABELS, array.shape[0])
    else:
        raise InputError("IDX writer handles image stacks (n, r, c) or label vectors")
    with _open_maybe_gz(path, "wb") as fh:
        fh.write(head + array.tobytes())


def pixel_centers(rows=28, cols=28):
    """Pixel centers in row-major order mapped affinely into ``[-1, 1]^2``.

    Column maps to x (left to right), row maps to y (top to bottom is +1 to -1).
    """
    r, c = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    x = (2.0 * c + 1.0) / cols - 1.0
    y = 1.0 - (2.0 * r + 1.0) / rows
    return np.stack([x.ravel(), y.ravel()], axis=1)


def mnist_to_points(image, mode="full"):
    """Turn a 28x28 image into a 2-D cloud with an intensity channel.

    ``mode`` is ``"full"`` (every pixel) or an int ``n`` (the ``n`` brightest
    pixels, ties in row-major order).
    """
    image = np.asarray(image)
    if image.ndim != 2:
        raise InputError(f"expected a 2-D image, got shape {image.shape}")
    coords = pixel_centers(*image.shape)
    inten = image.reshape(-1).astype(np.float64) / 255.0
    if mode == "full":
        return PointCloud(coords, inten[:, None])
    n = int(mode)
    if not 1 <= n <= inten.size:
        raise InputError(f"cannot keep {n} of {inten.size} pixels")
    keep = np.argsort(-inten, kind="stable")[:n]
    return PointCloud(coords[keep], inten[keep, None])


def mnist_dataset(images_path, labels_path, mode="full", limit=None, split="train"):
    images = read_idx(images_path)
    labels = read_idx(labels_path).astype(np.int64)
    if len(images) != len(labels):
        raise InputError("image and label files disagree on the number of items")
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    clouds = [mnist_to_points(im, mode) for im in images]
    return Dataset(clouds, labels, [str(d) for d in range(10)], split)


# ---------------------------------------------------------------------------
# synthetic shapes

SHAPES = ("sphere", "cube", "cylinder", "disk")


def random_rotation(rng):
    """Uniform rotation matrix from a random unit quaternion."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def _sphere(rng, n):
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    # part: upper vs lower hemisphere
    return v, (v[:, 2] < 0).astype(np.int64)


def _cube(rng, n):
    face = rng.integers(0, 6, size=n)
    uv = rng.random((n, 2)) - 0.5
    axis = face // 2
    sign = np.where(face % 2 == 0, -0.5, 0.5)
    pts = np.empty((n, 3))
    for a in range(3):
        others = [b for b in range(3) if b != a]
        sel = axis == a
        pts[sel, a] = sign[sel]
        pts[np.ix_(sel, others)] = uv[sel]
    # part: top/bottom faces vs sides
    return pts, (axis == 2).astype(np.int64)


def _cylinder(rng, n, radius=0.5, height=2.0):
    wall = 2 * math.pi * radius * height
    cap = math.pi * radius * radius
    on_cap = rng.random(n) < 2 * cap / (wall + 2 * cap)
    pts = np.empty((n, 3))
    theta = rng.random(n) * 2 * math.pi
    nw = int((~on_cap).sum())
    pts[~on_cap, 0] = radius * np.cos(theta[~on_cap])
    pts[~on_cap, 1] = radius * np.sin(theta[~on_cap])
    pts[~on_cap, 2] = (rng.random(nw) - 0.5) * height
    r = radius * np.sqrt(rng.random(int(on_cap.sum())))
    pts[on_cap, 0] = r * np.cos(theta[on_cap])
    pts[on_cap, 1] = r * np.sin(theta[on_cap])
    pts[on_cap, 2] = np.where(rng.random(int(on_cap.sum())) < 0.5, -height / 2, height / 2)
    # part: caps (1) vs wall (0)
    return pts, on_cap.astype(np.int64)


def _disk(rng, n, radius=1.0):
    r = radius * np.sqrt(rng.random(n))
    t = rng.random(n) * 2 * math.pi
    pts = np.stack([r * np.cos(t), r * np.sin(t), np.zeros(n)], axis=1)
    # part: inner disk vs outer ring of equal area
    return pts, (r > radius / math.sqrt(2)).astype(np.int64)


_GEN = {"sphere": _sphere, "cube": _cube, "cylinder": _cylinder, "disk": _disk}


def synth_cloud(shape, n_points, noise, rng, rotate=True):
    pts, parts = _GEN[shape](rng, n_points)
    if noise > 0:
        pts = pts + rng.normal(scale=noise, size=pts.shape)
    if rotate:
        pts = pts @ random_rotation(rng).T
    return pts, parts


def synth_shapes(n_per_class, n_points, noise=0.0, seed=0, rotate=True, split="train"):
    """Four-class surface-sampled toy dataset, items interleaved by class."""
    rng = np.random.default_rng(seed)
    clouds, labels = [], []
    for _ in range(n_per_class):
        for ci, shape in enumerate(SHAPES):
            pts, _ = synth_cloud(shape, n_points, noise, rng, rotate)
            clouds.append(PointCloud(pts))
            labels.append(ci)
    return Dataset(clouds, np.asarray(labels, dtype=np.int64), list(SHAPES), split)


def synth_parts(n_items, n_points, noise=0.0, seed=0, shape="cylinder", rotate=True, split="train"):
    """Part-segmentation toy data with two planted labels per point."""
    rng = np.random.default_rng(seed)
    clouds = []
    for _ in range(n_items):
        pts, parts = synth_cloud(shape, n_points, noise, rng, rotate)
        clouds.append(PointCloud(pts, labels=parts))
    names = {"cylinder": ["wall", "cap"], "sphere": ["upper", "lower"],
             "cube": ["side", "top_bottom"], "disk": ["inner", "outer"]}[shape]
    return Dataset(clouds, None, names, split, task="segment")


# ---------------------------------------------------------------------------
# dataset directories


def save_dataset(ds, directory):
    """Write one xyz file per cloud plus ``manifest.json``."""
    os.makedirs(directory, exist_ok=True)
    files = []
    for i, c in enumerate(ds.clouds):
        name = f"{i:06d}.xyz"
        save_xyz(os.path.join(directory, name), c)
        entry = {"file": name}
        if ds.labels is not None:
            entry["label"] = int(ds.labels[i])
        files.append(entry)
    manifest = {"class_names": ds.class_names, "split": ds.split, "task": ds.task, "items": files}
    with open(os.path.join(directory, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_dataset(directory):
    with open(os.path.join(directory, "manifest.json"), encoding="utf-8") as fh:
        manifest = json.load(fh)
    clouds, labels = [], []
    for item in manifest["items"]:
        clouds.append(load_xyz(os.path.join(directory, item["file"])))
        if "label" in item:
            labels.append(item["label"])
    lab = np.asarray(labels, dtype=np.int64) if labels else None
    return Dataset(clouds, lab, manifest["class_names"], manifest["split"], manifest["task"])
