"""Deterministic synthetic RGB-D scenes with per-point and per-pixel truth.

A scene is a colored pepper ellipsoid with a curved green peduncle tube on
top, plus green distractors (planar leaves, a vertical stem) and a far
wall, all splatted into a z-buffer at the camera resolution. The peduncle
and the distractors draw from overlapping hue distributions, so color
alone cannot separate them; geometry and context have to do the work.

Everything is a pure function of SceneParams: the seed fully determines
every output byte.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from . import cloud as pc
from . import config as cfgmod
from . import features as ft
from . import pipeline as pl
from . import rasters
from .errors import FormatError, InvalidInput

_NEAR_PLANE = 0.05          # splats closer than this are discarded
_MASK_GAP_PX = 2            # unannotated ring between positive and negative


@dataclass(frozen=True)
class SceneParams:
    seed: int = 0
    image_w: int = 640
    image_h: int = 480
    fx: float = 570.0
    fy: float = 570.0
    cx: float = 319.5
    cy: float = 239.5
    depth_scale: float = 0.001
    pepper_center: tuple = (0.0, 0.02, 0.45)
    pepper_axes: tuple = (0.035, 0.045, 0.035)
    pepper_color: str = "red"            # red | green | mixed
    peduncle_length: float = 0.05
    peduncle_radius: float = 0.005       # tube radius
    peduncle_arc_radius: float = 0.06    # curvature radius of the center line
    peduncle_flatten: float = 0.0        # 0 upright .. 1 flattened onto the fruit
    leaf_count: int = 3
    stem: bool = True
    noise_sigma: float = 0.0005          # gaussian depth noise, meters
    wall_offset: float = 0.25            # wall depth behind the pepper center
    green_hue_shift: float = 0.0         # per-scene hue offset of plant matter, degrees
    light_scale: float = 1.0             # per-scene brightness multiplier

    def intrinsics(self) -> pl.CameraIntrinsics:
        return pl.CameraIntrinsics(self.fx, self.fy, self.cx, self.cy, self.depth_scale)

    def validate(self) -> None:
        positive = (
            list(self.pepper_axes)
            + [self.peduncle_length, self.peduncle_radius, self.peduncle_arc_radius]
        )
        if any(v <= 0 for v in positive):
            raise InvalidInput("scene dimensions must be positive")
        if self.pepper_color not in ("red", "green", "mixed"):
            raise InvalidInput(f"unknown pepper color mode {self.pepper_color!r}")
        if self.noise_sigma < 0:
            raise InvalidInput("noise sigma must be >= 0")


@dataclass
class LabeledScene:
    params: SceneParams
    rgb: np.ndarray            # (H, W, 3) uint8
    depth_raw: np.ndarray      # (H, W) uint16
    labels_img: np.ndarray     # (H, W) uint8 per-pixel truth
    pos_mask: np.ndarray       # (H, W) bool: annotated peduncle region
    neg_mask: np.ndarray       # (H, W) bool: annotated non-peduncle region
    frame: pl.Frame            # unprojected cloud with labels

    @property
    def cloud(self) -> pc.PointCloud:
        return self.frame.cloud


# ---------------------------------------------------------------------------
# color and surface sampling helpers
# ---------------------------------------------------------------------------


def _hsv_to_rgb_array(h, s, v) -> np.ndarray:
    """Vectorized hexcone HSV -> uint8 RGB."""
    h = np.asarray(h, dtype=np.float64) % 360.0
    s = np.asarray(s, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    c = v * s
    x = c * (1.0 - np.abs((h / 60.0) % 2.0 - 1.0))
    m = v - c
    sector = (h // 60.0).astype(np.intp) % 6
    zeros = np.zeros_like(c)
    lut = np.stack(
        [
            np.stack([c, x, zeros], axis=1),
            np.stack([x, c, zeros], axis=1),
            np.stack([zeros, c, x], axis=1),
            np.stack([zeros, x, c], axis=1),
            np.stack([x, zeros, c], axis=1),
            np.stack([c, zeros, x], axis=1),
        ],
        axis=0,
    )
    rgb1 = lut[sector, np.arange(len(h))]
    return np.round((rgb1 + m[:, None]) * 255.0).astype(np.uint8)


def _colors(rng, n, h_mean, h_std, s_range, v_range, p: "SceneParams | None" = None, plant=False) -> np.ndarray:
    """Jittered material colors; plant hues shift and all values scale per scene."""
    if p is not None and plant:
        h_mean = h_mean + p.green_hue_shift
    h = (rng.normal(h_mean, h_std, n)) % 360.0
    s = rng.uniform(*s_range, n)
    v = rng.uniform(*v_range, n)
    if p is not None:
        v = np.clip(v * p.light_scale, 0.02, 1.0)
    return _hsv_to_rgb_array(h, s, v)


def _splat_count(area_m2: float, z: float, fx: float, oversample: float = 5.0) -> int:
    """Samples needed so a surface patch has no pixel holes at depth z."""
    px_per_m = fx / max(z, _NEAR_PLANE)
    return max(64, int(area_m2 * px_per_m * px_per_m * oversample))


def _sample_ellipsoid(rng, center, axes, n):
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return np.asarray(center) + d * np.asarray(axes)


def _sample_tube(rng, curve_fn, length, radius, n):
    """Random surface points of a tube swept along a 3D curve."""
    s = rng.uniform(0.0, length, n)
    psi = rng.uniform(0.0, 2.0 * np.pi, n)
    centers, tangents = curve_fn(s)
    ref = np.where(np.abs(tangents[:, 2:3]) < 0.9, [[0.0, 0.0, 1.0]], [[1.0, 0.0, 0.0]])
    e1 = np.cross(tangents, ref)
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    e2 = np.cross(tangents, e1)
    return centers + radius * (np.cos(psi)[:, None] * e1 + np.sin(psi)[:, None] * e2)


def _sample_disk(rng, center, basis_u, basis_v, n):
    r = np.sqrt(rng.uniform(0.0, 1.0, n))
    a = rng.uniform(0.0, 2.0 * np.pi, n)
    return (
        np.asarray(center)
        + (r * np.cos(a))[:, None] * basis_u
        + (r * np.sin(a))[:, None] * basis_v
    )


def _peduncle_curve(base, arc_radius, flatten, azimuth):
    """Circular-arc center line starting at the pepper top.

    flatten tilts the initial tangent away from vertical, reproducing
    peduncles pressed against the top of the fruit.
    """
    up = np.array([0.0, -1.0, 0.0])
    h_dir = np.array([np.cos(azimuth), 0.0, np.sin(azimuth)])
    tilt = flatten * np.deg2rad(75.0)
    t0 = np.cos(tilt) * up + np.sin(tilt) * h_dir
    n0 = np.cross(np.cross(t0, h_dir if abs(np.dot(t0, h_dir)) < 0.99 else up), t0)
    n0 /= np.linalg.norm(n0)

    def curve(s):
        ang = s / arc_radius
        centers = (
            np.asarray(base)
            + np.sin(ang)[:, None] * (arc_radius * t0)
            + (1.0 - np.cos(ang))[:, None] * (arc_radius * n0)
        )
        tangents = np.cos(ang)[:, None] * t0 + np.sin(ang)[:, None] * n0
        return centers, tangents

    return curve


# ---------------------------------------------------------------------------
# scene assembly
# ---------------------------------------------------------------------------


def _pepper_samples(rng, p: SceneParams):
    area = 4.0 * np.pi * max(p.pepper_axes) ** 2
    n = _splat_count(area, p.pepper_center[2], p.fx)
    pts = _sample_ellipsoid(rng, p.pepper_center, p.pepper_axes, n)
    if p.pepper_color == "red":
        cols = _colors(rng, n, 5.0, 6.0, (0.7, 0.95), (0.45, 0.8), p)
    elif p.pepper_color == "green":
        cols = _colors(rng, n, 115.0, 8.0, (0.55, 0.8), (0.3, 0.6), p, plant=True)
    else:
        # mixed ripening: green shoulder, red body, noisy boundary
        rel_y = (pts[:, 1] - p.pepper_center[1]) / p.pepper_axes[1]
        green = rel_y < rng.normal(-0.3, 0.15, n)
        cols = _colors(rng, n, 5.0, 6.0, (0.7, 0.95), (0.45, 0.8), p)
        cols[green] = _colors(rng, int(green.sum()), 115.0, 8.0, (0.55, 0.8), (0.3, 0.6), p, plant=True)
    return pts, cols, pc.LABEL_PEPPER


def _peduncle_samples(rng, p: SceneParams):
    base = np.asarray(p.pepper_center) - [0.0, p.pepper_axes[1], 0.0]
    curve = _peduncle_curve(base, p.peduncle_arc_radius, p.peduncle_flatten, rng.uniform(0, 2 * np.pi))
    area = 2.0 * np.pi * p.peduncle_radius * p.peduncle_length
    n = _splat_count(area, p.pepper_center[2], p.fx, oversample=8.0)
    pts = _sample_tube(rng, curve, p.peduncle_length, p.peduncle_radius, n)
    cols = _colors(rng, n, 112.0, 7.0, (0.5, 0.8), (0.35, 0.65), p, plant=True)
    return pts, cols, pc.LABEL_PEDUNCLE


def _stem_samples(rng, p: SceneParams):
    cx_, cy_, cz = p.pepper_center
    off_x = rng.uniform(-0.04, 0.04)
    off_z = rng.uniform(0.05, 0.12)
    top_y = cy_ - p.pepper_axes[1] - rng.uniform(0.10, 0.16)
    length = rng.uniform(0.25, 0.35)
    base = np.array([cx_ + off_x, top_y + length, cz + off_z])

    def curve(s):
        centers = base + np.outer(s, [0.0, -1.0, 0.0])
        tangents = np.tile([0.0, -1.0, 0.0], (len(s), 1))
        return centers, tangents

    radius = rng.uniform(0.010, 0.015)
    n = _splat_count(2.0 * np.pi * radius * length, cz + off_z, p.fx, oversample=6.0)
    pts = _sample_tube(rng, curve, length, radius, n)
    cols = _colors(rng, n, 110.0, 9.0, (0.45, 0.75), (0.3, 0.6), p, plant=True)
    return pts, cols, pc.LABEL_BACKGROUND


def _leaf_samples(rng, p: SceneParams, high: bool):
    cx_, cy_, cz = p.pepper_center
    if high:
        # distractor in the 2D region of interest but well outside the 3D box
        center = np.array(
            [
                cx_ + rng.uniform(-0.06, 0.06),
                cy_ - p.pepper_axes[1] - rng.uniform(0.02, 0.08),
                cz + rng.uniform(0.07, 0.15),
            ]
        )
    else:
        center = np.array(
            [
                cx_ + rng.choice([-1.0, 1.0]) * rng.uniform(0.05, 0.12),
                cy_ + rng.uniform(-0.08, 0.08),
                cz + rng.uniform(-0.05, 0.12),
            ]
        )
    a = rng.uniform(0.02, 0.05)
    b = rng.uniform(0.015, 0.035)
    u = rng.normal(size=3)
    u /= np.linalg.norm(u)
    v = np.cross(u, rng.normal(size=3))
    v /= np.linalg.norm(v)
    n = _splat_count(np.pi * a * b, center[2], p.fx, oversample=6.0)
    pts = _sample_disk(rng, center, a * u, b * v, n)
    cols = _colors(rng, n, 115.0, 10.0, (0.45, 0.8), (0.3, 0.65), p, plant=True)
    return pts, cols, pc.LABEL_BACKGROUND


def generate(params: SceneParams) -> LabeledScene:
    """Render one scene: z-buffered splatting, then rasters, masks and cloud."""
    params.validate()
    rng = np.random.default_rng(params.seed)
    h, w = params.image_h, params.image_w
    wall_z = params.pepper_center[2] + params.wall_offset

    batches = [_pepper_samples(rng, params), _peduncle_samples(rng, params)]
    if params.stem:
        batches.append(_stem_samples(rng, params))
    for i in range(params.leaf_count):
        batches.append(_leaf_samples(rng, params, high=(i == 0)))

    pts = np.vstack([b[0] for b in batches])
    cols = np.vstack([b[1] for b in batches])
    labs = np.concatenate([np.full(len(b[0]), b[2], dtype=np.uint8) for b in batches])

    # z-buffer: wall first, then nearest splat per pixel
    zbuf = np.full((h, w), wall_z)
    rgb = np.empty((h, w, 3), dtype=np.uint8)
    wall_cols = _colors(rng, h * w, 95.0, 18.0, (0.1, 0.3), (0.12, 0.3), params, plant=True)
    rgb[:] = wall_cols.reshape(h, w, 3)
    labels_img = np.full((h, w), pc.LABEL_BACKGROUND, dtype=np.uint8)

    z = pts[:, 2]
    keep = z > _NEAR_PLANE
    u = np.round(pts[:, 0] * params.fx / z + params.cx).astype(np.int64)
    v = np.round(pts[:, 1] * params.fy / z + params.cy).astype(np.int64)
    keep &= (u >= 0) & (u < w) & (v >= 0) & (v < h) & (z < wall_z)
    u, v, z = u[keep], v[keep], z[keep]
    cols, labs = cols[keep], labs[keep]
    flat = v * w + u
    order = np.lexsort((z, flat))
    flat, z = flat[order], z[order]
    cols, labs = cols[order], labs[order]
    first = np.concatenate([[True], flat[1:] != flat[:-1]])
    flat, z = flat[first], z[first]
    cols, labs = cols[first], labs[first]
    vv, uu = flat // w, flat % w
    zbuf[vv, uu] = z
    rgb[vv, uu] = cols
    labels_img[vv, uu] = labs

    pos_mask = labels_img == pc.LABEL_PEDUNCLE
    ring = ndimage.binary_dilation(pos_mask, iterations=_MASK_GAP_PX) & ~pos_mask
    neg_mask = ~pos_mask & ~ring

    if params.noise_sigma > 0:
        zbuf = zbuf + rng.normal(0.0, params.noise_sigma, zbuf.shape)
    depth_raw = np.clip(np.round(zbuf / params.depth_scale), 1, 65535).astype(np.uint16)

    frame = pl.Frame.from_rasters(rgb, depth_raw, params.intrinsics(), labels_img)
    return LabeledScene(params, rgb, depth_raw, labels_img, pos_mask, neg_mask, frame)


# ---------------------------------------------------------------------------
# on-disk scenes and the benchmark set
# ---------------------------------------------------------------------------

_SUFFIXES = ("cloud", "rgb.ppm", "depth.pgm", "pos.pgm", "neg.pgm")


def scene_files(scene_id: str) -> list[str]:
    return [f"{scene_id}_{s}" if not s == "cloud" else f"{scene_id}.cloud" for s in _SUFFIXES]


def save_scene(out_dir, scene_id: str, scene: LabeledScene) -> list[str]:
    files = scene_files(scene_id)
    pc.save_cloud(os.path.join(out_dir, files[0]), scene.cloud)
    rasters.write_ppm(os.path.join(out_dir, files[1]), scene.rgb)
    rasters.write_pgm16(os.path.join(out_dir, files[2]), scene.depth_raw)
    rasters.write_mask(os.path.join(out_dir, files[3]), scene.pos_mask)
    rasters.write_mask(os.path.join(out_dir, files[4]), scene.neg_mask)
    return files


def load_scene(scene_dir, scene_id: str, intr: pl.CameraIntrinsics) -> LabeledScene:
    """Rebuild a LabeledScene from its five files (params are not recovered)."""
    files = scene_files(scene_id)
    cloud = pc.load_cloud(os.path.join(scene_dir, files[0]))
    rgb = rasters.read_ppm(os.path.join(scene_dir, files[1]))
    depth_raw = rasters.read_pgm16(os.path.join(scene_dir, files[2]))
    pos_mask = rasters.read_mask(os.path.join(scene_dir, files[3]))
    neg_mask = rasters.read_mask(os.path.join(scene_dir, files[4]))
    base, pixels, pixel_rows = pl.unproject_depth(depth_raw, intr, rgb)
    if len(base) != len(cloud):
        raise FormatError(f"{scene_id}: cloud file does not match depth raster")
    labels_img = np.full(depth_raw.shape, pc.LABEL_UNLABELED, dtype=np.uint8)
    if cloud.labels is not None:
        labels_img[pixels[:, 0], pixels[:, 1]] = cloud.labels
    frame = pl.Frame(rgb, depth_raw, intr, cloud, pixels, pixel_rows)
    return LabeledScene(None, rgb, depth_raw, labels_img, pos_mask, neg_mask, frame)


def _draw_scene_params(rng, base: SceneParams, seed: int) -> SceneParams:
    """Benchmark distribution: varied fruit, curvature, clutter and color."""
    return replace(
        base,
        seed=seed,
        pepper_center=(
            base.pepper_center[0] + rng.uniform(-0.015, 0.015),
            base.pepper_center[1] + rng.uniform(-0.01, 0.01),
            base.pepper_center[2] + rng.uniform(-0.02, 0.03),
        ),
        pepper_axes=(
            rng.uniform(0.028, 0.042),
            rng.uniform(0.032, 0.048),
            rng.uniform(0.028, 0.042),
        ),
        pepper_color="red" if rng.uniform() < 0.6 else "mixed",
        peduncle_length=rng.uniform(0.04, 0.06),
        peduncle_radius=rng.uniform(0.004, 0.0065),
        peduncle_arc_radius=rng.uniform(0.04, 0.12),
        peduncle_flatten=rng.uniform(0.0, 0.6),
        leaf_count=int(rng.integers(2, 8)),
        noise_sigma=rng.uniform(0.0004, 0.0012),
        green_hue_shift=rng.normal(0.0, 7.0),
        light_scale=rng.uniform(0.8, 1.15),
    )


def benchmark_base() -> SceneParams:
    """Close-up desk-scale camera used by the standard synthetic benchmark."""
    return SceneParams(
        image_w=224,
        image_h=168,
        fx=194.0,
        fy=194.0,
        cx=111.5,
        cy=83.5,
        pepper_center=(0.0, 0.01, 0.32),
    )


def benchmark_params(
    n_scenes: int, master_seed: int, base: SceneParams | None = None
) -> list[SceneParams]:
    """The deterministic per-scene parameter draws of a benchmark set."""
    if n_scenes < 1:
        raise InvalidInput("need at least one scene")
    base = base if base is not None else SceneParams()
    rng = np.random.default_rng(master_seed)
    out = []
    for _ in range(n_scenes):
        seed = int(rng.integers(0, 2**62))
        out.append(_draw_scene_params(rng, base, seed))
    return out


def make_benchmark(
    out_dir,
    n_scenes: int,
    master_seed: int,
    n_train: int | None = None,
    base: SceneParams | None = None,
) -> str:
    """Generate a seeded scene set plus manifest; returns the manifest path.

    Scene ids carry the split (`train####` / `eval####`); the camera
    configuration is echoed to config.cfg next to the manifest so scenes
    can be reloaded without the generating code.
    """
    base = base if base is not None else SceneParams()
    if n_train is None:
        n_train = max(1, n_scenes // 5)
    os.makedirs(out_dir, exist_ok=True)
    lines = []
    for i, params in enumerate(benchmark_params(n_scenes, master_seed, base)):
        scene_id = f"train{i:04d}" if i < n_train else f"eval{i - n_train:04d}"
        files = save_scene(out_dir, scene_id, generate(params))
        lines.append(f"{scene_id} {params.seed} " + " ".join(files))
    manifest = os.path.join(out_dir, "manifest.txt")
    with open(manifest, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    cfg = cfgmod.default_config()
    cfg.update(
        {
            "image_width": str(base.image_w),
            "image_height": str(base.image_h),
            "fx": repr(float(base.fx)),
            "fy": repr(float(base.fy)),
            "cx": repr(float(base.cx)),
            "cy": repr(float(base.cy)),
            "depth_scale": repr(float(base.depth_scale)),
        }
    )
    cfgmod.write_config(os.path.join(out_dir, "config.cfg"), cfg)
    return manifest


def load_manifest(path) -> list[dict]:
    """Manifest rows as {id, seed, files, split} dicts."""
    entries = []
    with open(path) as fh:
        for raw in fh:
            line = raw.strip()
            if not line:
                continue
            tok = line.split()
            if len(tok) < 3:
                raise FormatError(f"malformed manifest line {raw!r}")
            entries.append(
                {
                    "id": tok[0],
                    "seed": int(tok[1]),
                    "files": tok[2:],
                    "split": "train" if tok[0].startswith("train") else "eval",
                }
            )
    return entries


def load_benchmark_scene(manifest_path, entry: dict) -> LabeledScene:
    scene_dir = os.path.dirname(os.path.abspath(manifest_path))
    cfg = cfgmod.load_config(os.path.join(scene_dir, "config.cfg"))
    intr = pl.CameraIntrinsics(
        cfgmod.cfg_float(cfg, "fx"),
        cfgmod.cfg_float(cfg, "fy"),
        cfgmod.cfg_float(cfg, "cx"),
        cfgmod.cfg_float(cfg, "cy"),
        cfgmod.cfg_float(cfg, "depth_scale"),
    )
    return load_scene(scene_dir, entry["id"], intr)
