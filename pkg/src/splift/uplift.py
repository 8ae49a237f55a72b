"""Learning-free uplifting of 2D feature maps into per-Gaussian 3D features.

Uplifting aggregates every pixel feature into the Gaussians that rendered
it, weighted by the alpha-blending weights, then normalizes each Gaussian by
its total accumulated weight. It is the normalized transpose of rendering:
with W the (pixels x gaussians) weight matrix of all views stacked and D the
diagonal of per-Gaussian weight sums, the uplifted features are
``f = D^-1 W^T F``. The per-Gaussian weight sums ("importance") double as
a pruning criterion, and a single unit-step gradient iteration on the
rendering reconstruction loss, preconditioned by D^-1 and started at zero,
reproduces the same features.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import NumericError, ValidationError
from .feature_io import FeatureMap, bilinear_resize
from .raster import RasterSettings, DEFAULT_SETTINGS, rasterize_weights, render
from .scene import Camera, GaussianScene


@dataclass
class GaussianFeatures:
    """Per-Gaussian feature matrix over the active subset of a scene."""

    values: np.ndarray  # (n_active, c)
    channel_names: list[str] | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        if not np.isfinite(values).all():
            raise ValidationError("features contain non-finite values")
        self.values = values

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[1]


def _frame_data(fm, cam: Camera) -> np.ndarray:
    """Flattened (pixels x c) feature data, resized to camera dims if needed."""
    data = fm.data if isinstance(fm, FeatureMap) else np.asarray(fm, dtype=np.float64)
    if data.ndim == 2:
        data = data[:, :, None]
    if data.shape[:2] != (cam.height, cam.width):
        data = bilinear_resize(data, cam.height, cam.width)
    return data.reshape(cam.height * cam.width, -1)


def _accumulate(scene: GaussianScene, frames, settings: RasterSettings,
                buffers=None):
    """Shared accumulation pass: weighted numerator, weight sums, hit counts."""
    if not frames:
        raise ValidationError("uplift needs at least one frame")
    n = scene.n_active
    numerator = None
    beta = np.zeros(n)
    counts = np.zeros(n)
    for k, (cam, fm) in enumerate(frames):
        data = _frame_data(fm, cam)
        if numerator is None:
            numerator = np.zeros((n, data.shape[1]))
        elif data.shape[1] != numerator.shape[1]:
            raise ValidationError(
                f"frame {k}: channel count {data.shape[1]} differs from "
                f"{numerator.shape[1]}"
            )
        buf = buffers[k] if buffers is not None else rasterize_weights(scene, cam, settings)
        op_t = buf.to_sparse(transpose=True)  # (gaussians x pixels)
        numerator += op_t @ data
        beta += buf.weight_sums()
        counts += buf.hit_counts()
    return numerator, beta, counts


def uplift(scene: GaussianScene, frames,
           settings: RasterSettings = DEFAULT_SETTINGS,
           buffers=None):
    """Aggregate 2D features into per-Gaussian features, weight-normalized.

    ``frames`` is a list of (Camera, FeatureMap-or-array) pairs. Returns
    ``(GaussianFeatures, beta)`` where beta is each Gaussian's summed blend
    weight over all frames. Gaussians never rendered (beta = 0) get the zero
    feature. Precomputed fragment ``buffers`` may be passed to skip
    rasterization.
    """
    numerator, beta, _ = _accumulate(scene, frames, settings, buffers)
    safe = np.where(beta > 0, beta, 1.0)
    values = numerator / safe[:, None]
    values[beta == 0] = 0.0
    return GaussianFeatures(values=values), beta


def uplift_count_normalized(scene: GaussianScene, frames,
                            settings: RasterSettings = DEFAULT_SETTINGS,
                            buffers=None) -> GaussianFeatures:
    """Ablation variant normalizing by fragment count instead of weight sum.

    Large opaque Gaussians accumulate disproportionate values under this
    scheme; it exists as a comparison baseline.
    """
    numerator, _, counts = _accumulate(scene, frames, settings, buffers)
    safe = np.where(counts > 0, counts, 1.0)
    values = numerator / safe[:, None]
    values[counts == 0] = 0.0
    return GaussianFeatures(values=values)


def prune_by_importance(scene: GaussianScene, beta: np.ndarray,
                        keep_fraction: float = 0.5) -> GaussianScene:
    """Keep the ceil(keep_fraction * n_active) highest-importance Gaussians.

    Ties break by index ascending. Returns a new scene; parameters of the
    surviving Gaussians are untouched.
    """
    if not 0.0 < keep_fraction <= 1.0:
        raise ValidationError(f"keep_fraction must be in (0, 1], got {keep_fraction}")
    beta = np.asarray(beta, dtype=np.float64).reshape(-1)
    active = scene.active_indices()
    if beta.shape[0] != active.size:
        raise ValidationError(
            f"beta length {beta.shape[0]} != active Gaussian count {active.size}"
        )
    n_keep = int(np.ceil(keep_fraction * active.size))
    order = np.lexsort((np.arange(beta.size), -beta))
    keep_local = order[:n_keep]
    new_mask = np.zeros(scene.n_total, dtype=bool)
    new_mask[active[keep_local]] = True
    return replace(scene, active_mask=new_mask)


def reconstruction_loss(scene: GaussianScene, frames, features: np.ndarray,
                        settings: RasterSettings = DEFAULT_SETTINGS,
                        buffers=None) -> float:
    """0.5 * squared error between rendered features and the 2D targets."""
    features = np.asarray(features, dtype=np.float64)
    total = 0.0
    for k, (cam, fm) in enumerate(frames):
        data = _frame_data(fm, cam)
        buf = buffers[k] if buffers is not None else rasterize_weights(scene, cam, settings)
        rendered = buf.to_sparse() @ features
        total += 0.5 * float(((rendered - data) ** 2).sum())
    return total


def refine_by_gradient(scene: GaussianScene, frames, f0: np.ndarray | GaussianFeatures,
                       steps: int, step_size: float = 1.0,
                       settings: RasterSettings = DEFAULT_SETTINGS,
                       buffers=None) -> GaussianFeatures:
    """Preconditioned gradient descent on the rendering reconstruction loss.

    Iterates ``f <- f - step_size * D^-1 W^T (W f - F)``. Starting from zero
    features, one unit step reproduces :func:`uplift` exactly.
    """
    if steps < 0:
        raise ValidationError(f"steps must be >= 0, got {steps}")
    if isinstance(f0, GaussianFeatures):
        f0 = f0.values
    f = np.array(f0, dtype=np.float64)
    if f.ndim == 1:
        f = f[:, None]
    if steps == 0:
        return GaussianFeatures(values=f)
    if buffers is None:
        buffers = [rasterize_weights(scene, cam, settings) for cam, _ in frames]
    ops = [b.to_sparse() for b in buffers]
    ops_t = [b.to_sparse(transpose=True) for b in buffers]
    targets = [_frame_data(fm, cam) for cam, fm in frames]
    beta = np.zeros(scene.n_active)
    for op_t in ops_t:
        beta += np.asarray(op_t.sum(axis=1)).reshape(-1)
    inv_beta = np.where(beta > 0, 1.0 / np.where(beta > 0, beta, 1.0), 0.0)
    for step in range(steps):
        grad = np.zeros_like(f)
        for op, op_t, target in zip(ops, ops_t, targets):
            grad += op_t @ (op @ f - target)
        f = f - step_size * inv_beta[:, None] * grad
        if not np.isfinite(f).all():
            raise NumericError(f"non-finite features at refinement step {step}")
    return GaussianFeatures(values=f)


def reproject_mask(scene: GaussianScene, ref_cam: Camera, ref_mask: FeatureMap,
                   target_cam: Camera,
                   settings: RasterSettings = DEFAULT_SETTINGS) -> FeatureMap:
    """Geometry-only mask transfer: uplift from one view, render to another."""
    gf, _ = uplift(scene, [(ref_cam, ref_mask)], settings)
    out = render(scene, target_cam, gf.values, settings=settings)
    return FeatureMap(data=out.channels, camera_id=target_cam.id)
