"""Color conversion and 33-bin point-feature histograms.

Each 3D point gets a 36-dimensional descriptor: normalized HSV (3 values)
concatenated with a fast point-feature histogram (3 Darboux-frame angles
x 11 bins). Histograms are percentage-normalized per angle block and are
invariant under rigid motion of the cloud.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import cloud as pc
from .errors import (
    DegeneratePair,
    EmptyHistogram,
    FormatError,
    InvalidDescriptor,
    InvalidInput,
)

FPFH_BINS_PER_FEATURE = 11
FPFH_DIM = 3 * FPFH_BINS_PER_FEATURE      # 33
FEATURE_DIM = 3 + FPFH_DIM                # 36

# Pairs whose separation is (near) parallel to the source normal have no
# well-defined Darboux frame; they are skipped, never clamped.
_CROSS_EPS = 1e-9


@dataclass(frozen=True)
class HsvColor:
    """Hue in degrees [0, 360); saturation and value in [0, 1]."""

    h: float
    s: float
    v: float


@dataclass(frozen=True)
class DarbouxAngles:
    alpha: float     # in [-1, 1]
    phi: float       # in [-1, 1]
    theta: float     # in (-pi, pi]


def rgb_to_hsv(r: float, g: float, b: float) -> HsvColor:
    """Standard hexcone RGB (0-255 per channel) to HSV; s == 0 forces h == 0."""
    for c in (r, g, b):
        if not 0 <= c <= 255:
            raise InvalidInput(f"channel {c} outside [0, 255]")
    rn, gn, bn = r / 255.0, g / 255.0, b / 255.0
    v = max(rn, gn, bn)
    delta = v - min(rn, gn, bn)
    s = 0.0 if v == 0 else delta / v
    if delta == 0:
        h = 0.0
    elif v == rn:
        h = 60.0 * (((gn - bn) / delta) % 6.0)
    elif v == gn:
        h = 60.0 * ((bn - rn) / delta + 2.0)
    else:
        h = 60.0 * ((rn - gn) / delta + 4.0)
    if h >= 360.0:
        h -= 360.0
    return HsvColor(h, s, v)


def rgb_to_hsv_array(rgb: np.ndarray) -> np.ndarray:
    """(N, 3) uint8 RGB to (N, 3) float64 [h_deg, s, v]."""
    rgbf = np.asarray(rgb, dtype=np.float64) / 255.0
    v = rgbf.max(axis=1)
    mn = rgbf.min(axis=1)
    delta = v - mn
    s = np.where(v > 0, delta / np.where(v > 0, v, 1.0), 0.0)
    h = np.zeros(len(rgbf))
    rn, gn, bn = rgbf[:, 0], rgbf[:, 1], rgbf[:, 2]
    safe = np.where(delta > 0, delta, 1.0)
    is_r = (v == rn) & (delta > 0)
    is_g = (v == gn) & (delta > 0) & ~is_r
    is_b = (delta > 0) & ~is_r & ~is_g
    h[is_r] = 60.0 * (((gn - bn)[is_r] / safe[is_r]) % 6.0)
    h[is_g] = 60.0 * ((bn - rn)[is_g] / safe[is_g] + 2.0)
    h[is_b] = 60.0 * ((rn - gn)[is_b] / safe[is_b] + 4.0)
    h[h >= 360.0] -= 360.0
    return np.column_stack([h, s, v])


def hsv_to_rgb(h: float, s: float, v: float) -> tuple[int, int, int]:
    """Inverse hexcone conversion, rounding to integer channels."""
    h = h % 360.0
    c = v * s
    x = c * (1.0 - abs((h / 60.0) % 2.0 - 1.0))
    m = v - c
    sector = int(h // 60.0) % 6
    rgb1 = [(c, x, 0), (x, c, 0), (0, c, x), (0, x, c), (x, 0, c), (c, 0, x)][sector]
    return tuple(int(round((u + m) * 255.0)) for u in rgb1)


def darboux_angles(p_s, n_s, p_t, n_t) -> DarbouxAngles:
    """Darboux-frame angles for an ordered (source, target) point/normal pair.

    The caller is responsible for picking the source as the point whose
    normal makes the smaller angle with the separation vector. Raises
    DegeneratePair when the separation is parallel to the source normal.
    """
    p_s = np.asarray(p_s, dtype=np.float64)
    n_s = np.asarray(n_s, dtype=np.float64)
    p_t = np.asarray(p_t, dtype=np.float64)
    n_t = np.asarray(n_t, dtype=np.float64)
    d = p_t - p_s
    dist = np.linalg.norm(d)
    if dist == 0.0:
        raise DegeneratePair("coincident points")
    u = n_s
    cx = np.cross(d, u)
    cx_norm = np.linalg.norm(cx)
    if cx_norm < _CROSS_EPS:
        raise DegeneratePair("separation parallel to source normal")
    v = cx / cx_norm
    w = np.cross(u, v)
    alpha = float(np.dot(v, n_t))
    phi = float(np.dot(u, d) / dist)
    theta = float(np.arctan2(np.dot(w, n_t), np.dot(u, n_t)))
    return DarbouxAngles(alpha, phi, theta)


def _pair_angles(ps, ns, pt, nt):
    """Vectorized Darboux angles with the source-selection convention applied.

    For each row the source is the endpoint whose normal has the smaller
    angle to the separation vector (ties keep the given order). Returns
    (alpha, phi, theta, valid) where invalid rows are degenerate pairs.
    """
    d = pt - ps
    dist = np.linalg.norm(d, axis=1)
    ok = dist > 0.0
    dhat = np.where(ok[:, None], d / np.where(ok, dist, 1.0)[:, None], 0.0)
    swap = np.einsum("ij,ij->i", ns, dhat) < np.einsum("ij,ij->i", nt, -dhat)
    src_n = np.where(swap[:, None], nt, ns)
    tgt_n = np.where(swap[:, None], ns, nt)
    d = np.where(swap[:, None], -d, d)
    cx = np.cross(d, src_n)
    cx_norm = np.linalg.norm(cx, axis=1)
    valid = ok & (cx_norm >= _CROSS_EPS)
    safe = np.where(valid, cx_norm, 1.0)
    v = cx / safe[:, None]
    w = np.cross(src_n, v)
    alpha = np.einsum("ij,ij->i", v, tgt_n)
    phi = np.einsum("ij,ij->i", src_n, d) / np.where(ok, dist, 1.0)
    theta = np.arctan2(np.einsum("ij,ij->i", w, tgt_n), np.einsum("ij,ij->i", src_n, tgt_n))
    return alpha, phi, theta, valid


def _bin_index(x: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Half-open equal-width bins with the final bin closed at hi."""
    b = np.floor((x - lo) / (hi - lo) * FPFH_BINS_PER_FEATURE).astype(np.intp)
    return np.clip(b, 0, FPFH_BINS_PER_FEATURE - 1)


def _histogram_pairs(src_idx, alpha, phi, theta, valid, n_points) -> tuple[np.ndarray, np.ndarray]:
    """Accumulate angle triples into per-point 33-bin histograms, sum 100 per block."""
    hist = np.zeros((n_points, FPFH_DIM))
    counts = np.zeros(n_points)
    s = src_idx[valid]
    np.add.at(hist, (s, _bin_index(alpha[valid], -1.0, 1.0)), 1.0)
    np.add.at(hist, (s, 11 + _bin_index(phi[valid], -1.0, 1.0)), 1.0)
    np.add.at(hist, (s, 22 + _bin_index(theta[valid], -np.pi, np.pi)), 1.0)
    np.add.at(counts, s, 1.0)
    has = counts > 0
    for block in range(3):
        sl = slice(11 * block, 11 * (block + 1))
        hist[has, sl] *= (100.0 / counts[has])[:, None]
    return hist, has


def spfh(cloud_or_points, normals: np.ndarray, i: int, neighbors) -> np.ndarray:
    """Simplified histogram of point i against its neighbor set (33 bins).

    Degenerate pairs are excluded from the count; raises EmptyHistogram if
    every pair degenerates.
    """
    neighbors = np.asarray(neighbors, dtype=np.intp)
    if neighbors.shape[0] == 0:
        raise EmptyHistogram("empty neighbor set")
    points = cloud_or_points.points if isinstance(cloud_or_points, pc.PointCloud) else np.asarray(cloud_or_points, dtype=np.float64)
    normals = np.asarray(normals, dtype=np.float64)
    ps = np.broadcast_to(points[i], (len(neighbors), 3))
    ns = np.broadcast_to(normals[i], (len(neighbors), 3))
    alpha, phi, theta, valid = _pair_angles(ps, ns, points[neighbors], normals[neighbors])
    if not np.any(valid):
        raise EmptyHistogram(f"all pairs of point {i} degenerate")
    hist, _ = _histogram_pairs(np.zeros(len(neighbors), dtype=np.intp), alpha, phi, theta, valid, 1)
    return hist[0]


def fpfh(
    cloud_or_points,
    normals: np.ndarray,
    k: int,
    valid_normals: np.ndarray | None = None,
    index: pc.SpatialIndex | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Fast point-feature histograms for every point of a cloud.

    Each point's own simplified histogram is combined with the
    distance-weighted average of its k neighbors' histograms:

        out(p) = spfh(p) + mean_i [ spfh(p_i) / ||p - p_i|| ]

    Neighbors at zero distance (duplicates) or with invalid normals are
    skipped from both the histograms and the average. Points whose own
    histogram has no valid pair are flagged invalid.

    Returns (descriptors (N, 33), valid (N,) bool).
    """
    points = cloud_or_points.points if isinstance(cloud_or_points, pc.PointCloud) else np.asarray(cloud_or_points, dtype=np.float64)
    n = points.shape[0]
    if k < 2:
        raise InvalidInput("fpfh needs k >= 2")
    if valid_normals is None:
        valid_normals = np.ones(n, dtype=bool)
    if index is None:
        index = pc.build_index(points)

    # k nearest excluding the point itself
    raw = pc.knn_batch(index, points, min(k + 1, n))
    nbrs = np.empty((n, min(k, n - 1)), dtype=np.intp)
    for row in range(n):
        r = raw[row][raw[row] != row]
        nbrs[row] = r[: nbrs.shape[1]]
    kk = nbrs.shape[1]

    src = np.repeat(np.arange(n, dtype=np.intp), kk)
    tgt = nbrs.ravel()
    pair_ok = valid_normals[src] & valid_normals[tgt]
    alpha, phi, theta, valid = _pair_angles(points[src], normals[src], points[tgt], normals[tgt])
    valid &= pair_ok
    own, own_ok = _histogram_pairs(src, alpha, phi, theta, valid, n)

    diff = points[nbrs] - points[:, None, :]
    omega = np.linalg.norm(diff, axis=2)                      # (N, kk)
    contrib = own_ok[nbrs] & (omega > 0.0) & valid_normals[:, None] & own_ok[:, None]
    weights = np.where(contrib, 1.0 / np.where(omega > 0, omega, 1.0), 0.0)
    counts = contrib.sum(axis=1)
    weighted = np.einsum("nk,nkd->nd", weights, own[nbrs])
    scale = np.where(counts > 0, counts, 1.0)
    out = own + weighted / scale[:, None]
    out_valid = own_ok & valid_normals
    out[~out_valid] = 0.0
    return out, out_valid


def assemble_feature(hsv: HsvColor, fpfh_bins: np.ndarray, fpfh_valid: bool = True) -> np.ndarray:
    """Concatenate [h/360, s, v] with the 33 histogram bins (length 36)."""
    if not fpfh_valid:
        raise InvalidDescriptor("cannot assemble a feature from an invalid histogram")
    fpfh_bins = np.asarray(fpfh_bins, dtype=np.float64)
    if fpfh_bins.shape != (FPFH_DIM,):
        raise InvalidDescriptor(f"histogram must have {FPFH_DIM} bins, got {fpfh_bins.shape}")
    if not np.all(np.isfinite(fpfh_bins)):
        raise InvalidDescriptor("histogram bins must be finite")
    return np.concatenate([[hsv.h / 360.0, hsv.s, hsv.v], fpfh_bins])


def assemble_features(hsv_arr: np.ndarray, fpfh_arr: np.ndarray) -> np.ndarray:
    """(N, 3) [h_deg, s, v] + (N, 33) histograms -> (N, 36) descriptors."""
    hsv_arr = np.asarray(hsv_arr, dtype=np.float64)
    out = np.empty((len(hsv_arr), FEATURE_DIM))
    out[:, 0] = hsv_arr[:, 0] / 360.0
    out[:, 1:3] = hsv_arr[:, 1:3]
    out[:, 3:] = fpfh_arr
    return out


def save_features(path, features: np.ndarray, labels: np.ndarray) -> None:
    """ASCII dump: `features v1 <count> 36`, then 36 decimals + label per line."""
    features = np.asarray(features, dtype=np.float64)
    lines = [f"features v1 {len(features)} {FEATURE_DIM}"]
    for row, lab in zip(features, labels):
        lines.append(" ".join(repr(float(v)) for v in row) + f" {int(lab)}")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_features(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 4 or header[0] != "features" or header[1] != "v1":
            raise FormatError(f"{path}: not a features v1 file")
        count, dim = int(header[2]), int(header[3])
        if dim != FEATURE_DIM:
            raise FormatError(f"{path}: expected {FEATURE_DIM} dims, found {dim}")
        feats = np.empty((count, dim))
        labels = np.empty(count, dtype=np.int64)
        for i in range(count):
            fields = fh.readline().split()
            if len(fields) != dim + 1:
                raise FormatError(f"{path}: malformed feature line {i + 1}")
            feats[i] = [float(v) for v in fields[:dim]]
            labels[i] = int(fields[dim])
    return feats, labels
