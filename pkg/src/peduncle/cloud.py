"""Point-cloud container, spatial queries, normal estimation and clustering.

Clouds are immutable numpy snapshots: build an index once, then query it
from any number of workers. Query results are exact (identical to a
brute-force scan) and deterministically ordered, with ties broken by
ascending point index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyInput, FormatError, InsufficientPoints, InvalidInput

LABEL_UNLABELED = 0
LABEL_PEDUNCLE = 1
LABEL_PEPPER = 2
LABEL_BACKGROUND = 3
LABEL_NAMES = {
    LABEL_UNLABELED: "unlabeled",
    LABEL_PEDUNCLE: "peduncle",
    LABEL_PEPPER: "pepper",
    LABEL_BACKGROUND: "background",
}

# Candidate lookups are inflated by this relative slack, then filtered with
# the same squared-distance arithmetic the brute-force oracle uses, so
# boundary points can never be missed to kd-tree internal rounding.
_SLACK = 1e-9


@dataclass
class PointCloud:
    """XYZ points in meters, parallel RGB colors and optional labels."""

    points: np.ndarray                 # (N, 3) float64, meters
    colors: np.ndarray | None = None   # (N, 3) uint8
    labels: np.ndarray | None = None   # (N,) uint8, see LABEL_* constants

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise InvalidInput(f"points must be (N, 3), got {self.points.shape}")
        if not np.all(np.isfinite(self.points)):
            raise InvalidInput("point coordinates must be finite")
        n = self.points.shape[0]
        if self.colors is None:
            self.colors = np.zeros((n, 3), dtype=np.uint8)
        else:
            self.colors = np.ascontiguousarray(self.colors, dtype=np.uint8)
            if self.colors.shape != (n, 3):
                raise InvalidInput(f"colors must be ({n}, 3), got {self.colors.shape}")
        if self.labels is not None:
            self.labels = np.ascontiguousarray(self.labels, dtype=np.uint8)
            if self.labels.shape != (n,):
                raise InvalidInput(f"labels must be ({n},), got {self.labels.shape}")

    def __len__(self) -> int:
        return self.points.shape[0]

    def subset(self, indices: np.ndarray) -> "PointCloud":
        """New cloud holding only the given point rows."""
        idx = np.asarray(indices, dtype=np.intp)
        return PointCloud(
            self.points[idx],
            self.colors[idx],
            None if self.labels is None else self.labels[idx],
        )


@dataclass(frozen=True)
class BoundingBox3:
    """Axis-aligned box; min <= max componentwise."""

    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "min", np.asarray(self.min, dtype=np.float64))
        object.__setattr__(self, "max", np.asarray(self.max, dtype=np.float64))
        if np.any(self.min > self.max):
            raise InvalidInput("box min must not exceed max")

    @property
    def extents(self) -> np.ndarray:
        return self.max - self.min

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.min + self.max)

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Boolean inclusion mask (boundary counts as inside)."""
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return np.all((p >= self.min) & (p <= self.max), axis=1)


@dataclass(frozen=True)
class Cluster:
    """Ascending point indices of one connected component."""

    indices: np.ndarray

    def __len__(self) -> int:
        return self.indices.shape[0]


class SpatialIndex:
    """kd-tree over a fixed cloud snapshot.

    Read-only after construction and safe for concurrent queries. The tree
    only produces candidate sets; final selection is redone with plain
    numpy squared distances so results match a brute-force scan exactly.
    """

    def __init__(self, points: np.ndarray):
        self._points = np.ascontiguousarray(points, dtype=np.float64)
        self._tree = cKDTree(self._points)

    @property
    def size(self) -> int:
        return self._points.shape[0]

    @property
    def points(self) -> np.ndarray:
        return self._points

    def _dist2(self, q: np.ndarray, idx) -> np.ndarray:
        d = self._points[idx] - q
        return np.einsum("ij,ij->i", d, d)


def build_index(cloud: PointCloud | np.ndarray) -> SpatialIndex:
    """Index a cloud snapshot for knn / radius queries.

    Raises EmptyInput for an empty cloud.
    """
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    if pts.shape[0] == 0:
        raise EmptyInput("cannot index an empty cloud")
    return SpatialIndex(pts)


def knn(index: SpatialIndex, q, k: int) -> np.ndarray:
    """Indices of the k nearest points, nondecreasing distance, ties by index.

    Raises InsufficientPoints when k exceeds the cloud size.
    """
    q = np.asarray(q, dtype=np.float64).reshape(3)
    if k < 1:
        raise InvalidInput("k must be >= 1")
    if k > index.size:
        raise InsufficientPoints(f"k={k} exceeds cloud size {index.size}")
    if k == index.size:
        cand = np.arange(index.size)
    else:
        dk, _ = index._tree.query(q, k=k)
        dk = float(np.max(np.atleast_1d(dk)))
        cand = np.asarray(
            index._tree.query_ball_point(q, dk * (1.0 + _SLACK) + 1e-300), dtype=np.intp
        )
        if cand.shape[0] < k:   # paranoia fallback, never expected
            cand = np.arange(index.size)
    d2 = index._dist2(q, cand)
    order = np.lexsort((cand, d2))
    return cand[order[:k]]


def knn_batch(index: SpatialIndex, queries: np.ndarray, k: int) -> np.ndarray:
    """(M, k) nearest-neighbor indices for M query points at once.

    Same ordering semantics as knn(); rows are re-sorted by exact squared
    distance with index tie-break.
    """
    queries = np.ascontiguousarray(queries, dtype=np.float64)
    if k < 1:
        raise InvalidInput("k must be >= 1")
    if k > index.size:
        raise InsufficientPoints(f"k={k} exceeds cloud size {index.size}")
    _, idx = index._tree.query(queries, k=k)
    idx = idx.reshape(len(queries), k)
    diff = index._points[idx] - queries[:, None, :]
    d2 = np.einsum("mkj,mkj->mk", diff, diff)
    o1 = np.argsort(idx, axis=1, kind="stable")
    idx = np.take_along_axis(idx, o1, axis=1)
    d2 = np.take_along_axis(d2, o1, axis=1)
    o2 = np.argsort(d2, axis=1, kind="stable")
    return np.take_along_axis(idx, o2, axis=1)


def radius_search(index: SpatialIndex, q, r: float) -> np.ndarray:
    """Ascending indices of all points within distance r (inclusive)."""
    if not r > 0:
        raise InvalidInput("radius must be positive")
    q = np.asarray(q, dtype=np.float64).reshape(3)
    cand = np.asarray(index._tree.query_ball_point(q, r * (1.0 + _SLACK)), dtype=np.intp)
    if cand.shape[0] == 0:
        return cand
    d2 = index._dist2(q, cand)
    keep = cand[d2 <= r * r]
    return np.sort(keep)


def estimate_normals(cloud: PointCloud, k: int, viewpoint) -> tuple[np.ndarray, np.ndarray]:
    """Per-point unit surface normals from k-neighborhood covariance.

    The normal is the eigenvector with the smallest eigenvalue, sign-flipped
    to face the viewpoint. Neighborhoods with rank < 2 covariance are
    flagged invalid (normal row zeroed) instead of fabricating a direction.

    Returns (normals (N, 3), valid (N,) bool).
    """
    if k < 3:
        raise InvalidInput("normal estimation needs k >= 3")
    if len(cloud) < k:
        raise InsufficientPoints(f"cloud of {len(cloud)} points cannot supply k={k}")
    viewpoint = np.asarray(viewpoint, dtype=np.float64).reshape(3)
    index = build_index(cloud)
    nbrs = knn_batch(index, cloud.points, k)        # includes the point itself
    neigh = cloud.points[nbrs]                      # (N, k, 3)
    mean = neigh.mean(axis=1, keepdims=True)
    d = neigh - mean
    cov = np.einsum("nki,nkj->nij", d, d) / k
    evals, evecs = np.linalg.eigh(cov)              # ascending eigenvalues
    normals = evecs[:, :, 0]
    # rank >= 2 requires genuine spread along the two larger eigendirections
    valid = evals[:, 1] > (1e-9 * np.maximum(evals[:, 2], 0.0) + 1e-18)
    to_view = viewpoint[None, :] - cloud.points
    flip = np.einsum("ni,ni->n", normals, to_view) < 0.0
    normals[flip] = -normals[flip]
    norms = np.linalg.norm(normals, axis=1)
    normals = normals / np.where(norms > 0, norms, 1.0)[:, None]
    normals[~valid] = 0.0
    return normals, valid


def compute_bbox(cloud: PointCloud, subset=None) -> BoundingBox3:
    """Componentwise min/max box over a subset (default: whole cloud)."""
    pts = cloud.points if subset is None else cloud.points[np.asarray(subset, dtype=np.intp)]
    if pts.shape[0] == 0:
        raise EmptyInput("bounding box of an empty subset")
    return BoundingBox3(pts.min(axis=0), pts.max(axis=0))


def centroid(cloud: PointCloud, subset=None) -> np.ndarray:
    """Arithmetic mean of the subset coordinates."""
    pts = cloud.points if subset is None else cloud.points[np.asarray(subset, dtype=np.intp)]
    if pts.shape[0] == 0:
        raise EmptyInput("centroid of an empty subset")
    return pts.mean(axis=0)


def euclidean_cluster(
    cloud: PointCloud,
    subset,
    tol: float,
    min_size: int = 1,
    max_size: int | None = None,
) -> list[Cluster]:
    """Connected components of the <=tol adjacency graph over a subset.

    Components outside [min_size, max_size] are discarded. Output is sorted
    by size descending, then by smallest member index; indices inside each
    cluster ascend and refer to the original cloud.
    """
    if not tol > 0:
        raise InvalidInput("cluster tolerance must be positive")
    if min_size < 1:
        raise InvalidInput("min_size must be >= 1")
    if max_size is None:
        max_size = len(cloud)
    if min_size > max_size:
        raise InvalidInput("min_size must not exceed max_size")
    subset = np.asarray(subset, dtype=np.intp)
    if subset.shape[0] == 0:
        return []
    pts = cloud.points[subset]
    tree = cKDTree(pts)
    neighbor_lists = tree.query_ball_point(pts, tol * (1.0 + _SLACK))
    tol2 = tol * tol

    parent = np.arange(subset.shape[0])

    def find(a: int) -> int:
        root = a
        while parent[root] != root:
            root = parent[root]
        while parent[a] != root:
            parent[a], a = root, parent[a]
        return root

    for i, nbrs in enumerate(neighbor_lists):
        nbrs = np.asarray(nbrs, dtype=np.intp)
        d = pts[nbrs] - pts[i]
        close = nbrs[np.einsum("ij,ij->i", d, d) <= tol2]
        ri = find(i)
        for j in close:
            rj = find(int(j))
            if ri != rj:
                parent[max(ri, rj)] = min(ri, rj)
                ri = min(ri, rj)

    roots = np.fromiter((find(i) for i in range(subset.shape[0])), dtype=np.intp)
    clusters = []
    for root in np.unique(roots):
        members = subset[roots == root]
        if min_size <= members.shape[0] <= max_size:
            clusters.append(Cluster(np.sort(members)))
    clusters.sort(key=lambda c: (-len(c), int(c.indices[0])))
    return clusters


def save_cloud(path, cloud: PointCloud) -> None:
    """Write the ASCII cloud format: header then `x y z r g b [label]` lines."""
    has_labels = 1 if cloud.labels is not None else 0
    lines = [f"pcloud v1 {len(cloud)} {has_labels}"]
    for i in range(len(cloud)):
        x, y, z = (repr(float(v)) for v in cloud.points[i])
        r, g, b = (int(v) for v in cloud.colors[i])
        if has_labels:
            lines.append(f"{x} {y} {z} {r} {g} {b} {int(cloud.labels[i])}")
        else:
            lines.append(f"{x} {y} {z} {r} {g} {b}")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_cloud(path) -> PointCloud:
    """Read the ASCII cloud format written by save_cloud."""
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 4 or header[0] != "pcloud" or header[1] != "v1":
            raise FormatError(f"{path}: not a pcloud v1 file")
        count, has_labels = int(header[2]), int(header[3])
        pts = np.empty((count, 3), dtype=np.float64)
        cols = np.empty((count, 3), dtype=np.uint8)
        labels = np.empty(count, dtype=np.uint8) if has_labels else None
        for i in range(count):
            fields = fh.readline().split()
            if len(fields) != (7 if has_labels else 6):
                raise FormatError(f"{path}: malformed point line {i + 1}")
            pts[i] = [float(v) for v in fields[:3]]
            cols[i] = [int(v) for v in fields[3:6]]
            if has_labels:
                labels[i] = int(fields[6])
    return PointCloud(pts, cols, labels)
