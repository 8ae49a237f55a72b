"""Synthetic scenes, brute-force oracles, and the uplift benchmark harness.

The two-cluster scene is the desk-scale stand-in for real captured scenes:
two spatially separated blobs of Gaussians carrying distinct feature
vectors, observed by a camera ring, with analytic ground-truth masks from
per-pixel dominant-cluster blend weight.

``dense_oracle`` assembles the rendering weight matrix explicitly with
straight per-pixel loops that share no blending or accumulation code with
the tile pipeline; it is the reference against which rendering and
uplifting are verified.
"""

from __future__ import annotations

import json
import platform
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .feature_io import FeatureMap
from .raster import DEFAULT_SETTINGS, RasterSettings, rasterize_weights, render
from .scene import SH_C0, Camera, GaussianScene
from .uplift import uplift


@dataclass
class SyntheticSpec:
    n_gaussians: int = 1000
    n_views: int = 12
    width: int = 128
    height: int = 96
    feature_dim: int = 8
    noise: float = 0.1
    cluster_separation: float = 2.0
    cluster_spread: float = 0.35
    ring_radius: float = 6.0
    ring_height: float = 0.0
    opacity_range: tuple = (0.7, 0.95)
    coverage_threshold: float = 0.5
    seed: int = 0


@dataclass
class TwoClusterData:
    scene: GaussianScene
    labels: np.ndarray                  # (n,) 0 for cluster A, 1 for cluster B
    gt_masks: dict                      # camera_id -> (H, W) bool, cluster A
    feature_maps: list                  # [(Camera, FeatureMap)] per view
    features: np.ndarray                # (n, c) per-Gaussian feature vectors
    cluster_vectors: np.ndarray         # (2, c)
    spec: SyntheticSpec = field(default=None)


def look_at_camera(cam_id: str, eye, target, width: int, height: int,
                   focal: float | None = None, up=(0.0, 0.0, 1.0)) -> Camera:
    """Camera at ``eye`` looking at ``target`` (x right, y down, z forward)."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd = fwd / np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(up, dtype=np.float64))
    nr = np.linalg.norm(right)
    if nr < 1e-9:  # looking straight along up: pick any perpendicular
        right = np.cross(fwd, np.array([1.0, 0.0, 0.0]))
        nr = np.linalg.norm(right)
    right = right / nr
    down = np.cross(fwd, right)
    c2w = np.stack([right, down, fwd], axis=1)
    w2c = np.eye(4)
    w2c[:3, :3] = c2w.T
    w2c[:3, 3] = -c2w.T @ eye
    if focal is None:
        focal = float(width)
    return Camera(
        id=cam_id, width=width, height=height,
        fx=focal, fy=focal, cx=width / 2.0, cy=height / 2.0,
        world_to_camera=w2c,
    )


def ring_cameras(n_views: int, radius: float, height: float, width: int,
                 img_height: int, target=(0.0, 0.0, 0.0)) -> list[Camera]:
    cams = []
    for k in range(n_views):
        theta = 2.0 * np.pi * k / n_views
        eye = (radius * np.cos(theta), radius * np.sin(theta), height)
        cams.append(look_at_camera(
            f"view{k:02d}", eye, target, width, img_height
        ))
    return cams


def make_two_cluster_scene(spec: SyntheticSpec) -> TwoClusterData:
    """Deterministic two-cluster scene with GT masks and 2D feature maps.

    Feature maps are alpha-normalized renders of the per-Gaussian feature
    vectors (cluster vector plus per-Gaussian noise), mirroring what a 2D
    backbone would produce for each view.
    """
    if spec.cluster_separation < 4.0 * spec.cluster_spread:
        raise ValidationError(
            f"clusters overlap: separation {spec.cluster_separation} < "
            f"4 * spread {spec.cluster_spread}"
        )
    rng = np.random.Generator(np.random.Philox(key=spec.seed))
    n = spec.n_gaussians
    n_a = n // 2
    labels = np.zeros(n, dtype=np.int64)
    labels[n_a:] = 1
    # clusters separated vertically so no ring camera sees one behind the other
    offsets = np.array([
        [0.0, 0.0, +spec.cluster_separation / 2.0],
        [0.0, 0.0, -spec.cluster_separation / 2.0],
    ])
    means = offsets[labels] + rng.normal(scale=spec.cluster_spread, size=(n, 3))

    # scale so that a few hundred Gaussians densely cover a cluster
    base = 2.2 * spec.cluster_spread / max(n_a, 1) ** (1.0 / 3.0)
    scales = base * rng.uniform(0.6, 1.4, size=(n, 3))
    quats = rng.normal(size=(n, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    lo, hi = spec.opacity_range
    opacities = rng.uniform(lo, hi, size=n)

    colors = np.array([[0.9, 0.15, 0.15], [0.15, 0.25, 0.9]])[labels]
    sh = np.zeros((n, 1, 3))
    sh[:, 0, :] = (colors - 0.5) / SH_C0

    cams = ring_cameras(
        spec.n_views, spec.ring_radius, spec.ring_height,
        spec.width, spec.height,
    )
    scene = GaussianScene(
        means=means.astype(np.float32), scales=scales.astype(np.float32),
        rotations=quats.astype(np.float32),
        opacities=opacities.astype(np.float32),
        sh_coeffs=sh.astype(np.float32), cameras=cams,
    )

    # orthonormal cluster feature vectors plus per-Gaussian noise
    vecs = np.zeros((2, spec.feature_dim))
    vecs[0, 0] = 1.0
    vecs[1, 1] = 1.0
    features = vecs[labels] + spec.noise * rng.normal(size=(n, spec.feature_dim))

    gt_masks, feature_maps = {}, []
    a_indicator = (labels == 0).astype(np.float64)
    for cam in cams:
        buf = rasterize_weights(scene, cam)
        out = render(scene, cam, np.column_stack([a_indicator, features]), buffer=buf)
        alpha = out.alpha
        w_a = out.channels[:, :, 0]
        w_b = alpha - w_a
        gt_masks[cam.id] = (w_a > w_b) & (alpha >= spec.coverage_threshold)
        safe = np.maximum(alpha, 1e-6)[:, :, None]
        fmap = np.where(alpha[:, :, None] > 1e-6, out.channels[:, :, 1:] / safe, 0.0)
        feature_maps.append((cam, FeatureMap(data=fmap, camera_id=cam.id)))

    return TwoClusterData(
        scene=scene, labels=labels, gt_masks=gt_masks,
        feature_maps=feature_maps, features=features,
        cluster_vectors=vecs, spec=spec,
    )


def make_scribbles(gt_mask: np.ndarray, seed: int = 0, n_points: int = 4,
                   radius: int = 2, erode: int = 2) -> np.ndarray:
    """Sparse scribble mask: small discs at random interior points of the GT."""
    import scipy.ndimage as ndi

    gt = np.asarray(gt_mask).astype(bool)
    interior = ndi.binary_erosion(gt, iterations=erode) if erode else gt
    if not interior.any():
        interior = gt
    ys, xs = np.nonzero(interior)
    if ys.size == 0:
        raise ValidationError("ground-truth mask is empty")
    rng = np.random.Generator(np.random.Philox(key=seed))
    pick = rng.choice(ys.size, size=min(n_points, ys.size), replace=False)
    scribble = np.zeros(gt.shape, dtype=np.float64)
    yy, xx = np.mgrid[-radius:radius + 1, -radius:radius + 1]
    disc = (yy ** 2 + xx ** 2) <= radius ** 2
    for y, x in zip(ys[pick], xs[pick]):
        y0, y1 = max(0, y - radius), min(gt.shape[0], y + radius + 1)
        x0, x1 = max(0, x - radius), min(gt.shape[1], x + radius + 1)
        scribble[y0:y1, x0:x1] = np.maximum(
            scribble[y0:y1, x0:x1],
            disc[(y0 - y + radius):(y1 - y + radius),
                 (x0 - x + radius):(x1 - x + radius)].astype(np.float64),
        )
    return scribble


def make_oracle_scene(seed: int, n_gaussians: int = 8, n_views: int = 2,
                      width: int = 8, height: int = 8) -> GaussianScene:
    """Tiny randomized scene for oracle comparisons.

    Gaussians are scattered in a unit box with varied scales, orientations
    and opacities; cameras sit at random directions and distances so some
    Gaussians fall outside frames or behind cameras.
    """
    rng = np.random.Generator(np.random.Philox(key=seed))
    n = n_gaussians
    means = rng.uniform(-0.6, 0.6, size=(n, 3))
    scales = rng.uniform(0.05, 0.45, size=(n, 3))
    quats = rng.normal(size=(n, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    opacities = rng.uniform(0.2, 0.98, size=n)
    sh = rng.uniform(-0.8, 0.8, size=(n, 1, 3))
    cams = []
    for k in range(n_views):
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        dist = rng.uniform(2.5, 5.0)
        target = rng.uniform(-0.3, 0.3, size=3)
        cams.append(look_at_camera(
            f"cam{k}", direction * dist, target, width, height,
            focal=rng.uniform(0.7, 1.3) * width,
        ))
    return GaussianScene(
        means=means.astype(np.float32), scales=scales.astype(np.float32),
        rotations=quats.astype(np.float32),
        opacities=opacities.astype(np.float32),
        sh_coeffs=sh.astype(np.float32), cameras=cams,
    )


# ---------------------------------------------------------------------------
# Dense brute-force oracle
# ---------------------------------------------------------------------------

def dense_oracle(scene: GaussianScene, cams: list[Camera],
                 settings: RasterSettings = DEFAULT_SETTINGS):
    """Explicit rendering-weight matrix from an independent blending path.

    Returns ``(W, D)``: W is dense, rows indexed by (camera, pixel) in
    row-major order, columns by active Gaussian; D is the vector of column
    sums (per-Gaussian total weight). Everything is computed with plain
    per-pixel loops over globally depth-sorted Gaussians - deliberately slow
    and simple, for verification only.
    """
    idx = scene.active_indices()
    n = idx.size
    total_pixels = sum(c.width * c.height for c in cams)
    if n * total_pixels > 1_000_000:
        raise ValidationError(
            f"oracle too large: {n} gaussians x {total_pixels} pixels > 1e6"
        )
    covs = scene.covariances(idx)
    means = scene.means[idx].astype(np.float64)
    opac = scene.opacities[idx].astype(np.float64)
    tile = settings.tile_size

    blocks = []
    for cam in cams:
        w2c = cam.world_to_camera
        R = w2c[:3, :3]
        entries = []  # (depth, gid, u, v, inv cov2d, tile rect)
        for g in range(n):
            t = R @ means[g] + w2c[:3, 3]
            if t[2] <= settings.near_plane:
                continue
            u = cam.fx * t[0] / t[2] + cam.cx
            v = cam.fy * t[1] / t[2] + cam.cy
            J = np.array([
                [cam.fx / t[2], 0.0, -cam.fx * t[0] / t[2] ** 2],
                [0.0, cam.fy / t[2], -cam.fy * t[1] / t[2] ** 2],
            ])
            M = J @ R
            c2 = M @ covs[g] @ M.T
            a = c2[0, 0] + settings.cov_regularization
            b = c2[0, 1]
            c = c2[1, 1] + settings.cov_regularization
            mid = 0.5 * (a + c)
            lam = mid + np.sqrt(max(mid * mid - (a * c - b * b), 0.0))
            r = settings.extent_sigmas * np.sqrt(max(lam, 0.0))
            if not (u + r > 0 and u - r < cam.width
                    and v + r > 0 and v - r < cam.height):
                continue
            det = a * c - b * b
            if det <= 0:
                continue
            n_tx = (cam.width + tile - 1) // tile
            n_ty = (cam.height + tile - 1) // tile
            tx0 = min(max(int(np.floor((u - r) / tile)), 0), n_tx)
            tx1 = min(max(int(np.floor((u + r) / tile)) + 1, 0), n_tx)
            ty0 = min(max(int(np.floor((v - r) / tile)), 0), n_ty)
            ty1 = min(max(int(np.floor((v + r) / tile)) + 1, 0), n_ty)
            inv = (c / det, -b / det, a / det)
            entries.append((t[2], g, u, v, inv, (tx0, tx1, ty0, ty1)))

        entries.sort(key=lambda e: (e[0], e[1]))
        W_cam = np.zeros((cam.height * cam.width, n))
        for py in range(cam.height):
            for px in range(cam.width):
                tx, ty = px // tile, py // tile
                cx, cy = px + 0.5, py + 0.5
                transmittance = 1.0
                for depth, g, u, v, inv, rect in entries:
                    tx0, tx1, ty0, ty1 = rect
                    if not (tx0 <= tx < tx1 and ty0 <= ty < ty1):
                        continue
                    dx, dy = cx - u, cy - v
                    power = -0.5 * (inv[0] * dx * dx + inv[2] * dy * dy) \
                        - inv[1] * dx * dy
                    if power > 0:
                        continue
                    alpha = min(opac[g] * np.exp(power), settings.alpha_clamp)
                    if alpha < settings.alpha_min:
                        continue
                    remaining = transmittance * (1.0 - alpha)
                    if remaining < settings.transmittance_min:
                        break
                    W_cam[py * cam.width + px, g] = alpha * transmittance
                    transmittance = remaining
        blocks.append(W_cam)
    W = np.concatenate(blocks, axis=0)
    return W, W.sum(axis=0)


# ---------------------------------------------------------------------------
# Benchmark harness
# ---------------------------------------------------------------------------

def benchmark_uplift(scene: GaussianScene, frames, repeats: int = 5,
                     settings: RasterSettings = DEFAULT_SETTINGS) -> dict:
    """Median accumulation time per view per channel, with machine info.

    Fragment buffers are built once during warm-up (they are shared across
    channels); the timed section is the per-channel feature accumulation.
    """
    if repeats <= 0:
        raise ValidationError(f"repeats must be positive, got {repeats}")
    buffers = [rasterize_weights(scene, cam, settings) for cam, _ in frames]
    setup_start = time.perf_counter()
    uplift(scene, frames, settings, buffers=buffers)  # warm-up
    warm_time = time.perf_counter() - setup_start

    m = len(frames)
    c = frames[0][1].data.shape[2] if hasattr(frames[0][1], "data") \
        else np.asarray(frames[0][1]).shape[2]
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        uplift(scene, frames, settings, buffers=buffers)
        times.append(time.perf_counter() - start)
    median_total = float(np.median(times))
    return {
        "n_views": m,
        "channels": int(c),
        "image_dims": [frames[0][0].height, frames[0][0].width],
        "n_gaussians": scene.n_active,
        "repeats": repeats,
        "warmup_seconds": warm_time,
        "median_total_seconds": median_total,
        "seconds_per_view": median_total / m,
        "seconds_per_view_per_channel": median_total / (m * c),
        "machine": {
            "platform": platform.platform(),
            "python": platform.python_version(),
            "numpy": np.__version__,
            "cpu_count": __import__("os").cpu_count(),
            "workers": 1,
        },
    }


def write_benchmark_report(path, report: dict) -> None:
    with open(path, "w") as f:
        json.dump(report, f, indent=1)
