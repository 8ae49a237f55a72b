"""Tile-based software rasterizer for Gaussian Splatting scenes.

Besides rendering images, the rasterizer materializes the per-pixel ordered
fragment lists (Gaussian id, alpha, blended weight) that drive feature
uplifting. The alpha-blending weight of Gaussian i at pixel p is
``w_i = alpha_i * prod_{j before i} (1 - alpha_j)`` with Gaussians blended
front to back in depth order.

Numeric conventions match the reference splatting implementation: alpha is
clamped at 0.99, contributions with alpha < 1/255 are skipped, blending for
a pixel stops before the fragment that would push transmittance below 1e-4,
projected covariances get a 0.3-pixel diagonal regularization, and Gaussians
are binned to 16x16 tiles by their 3-sigma screen extent. Depth ties break
by Gaussian index, so renders are deterministic.

Gaussian ids in fragments index the scene's *active* subset, matching the
row layout of per-Gaussian feature matrices. Fragments are materialized
rather than fused into the blending loop because rendering and uplifting
share them; a fused streaming mode would be an optimization with identical
outputs, not a semantic change.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ValidationError
from .scene import Camera, GaussianScene, eval_sh


@dataclass(frozen=True)
class RasterSettings:
    near_plane: float = 0.2
    alpha_clamp: float = 0.99
    alpha_min: float = 1.0 / 255.0
    transmittance_min: float = 1e-4
    cov_regularization: float = 0.3
    extent_sigmas: float = 3.0
    tile_size: int = 16


DEFAULT_SETTINGS = RasterSettings()


@dataclass
class ProjectedGaussians:
    """Screen-space Gaussians surviving culling (struct of arrays).

    ``ids`` index the active subset of the source scene. ``covs2d`` holds the
    upper triangle (a, b, c) of each regularized 2x2 covariance in pixels^2.
    """

    ids: np.ndarray       # (k,) int32
    means2d: np.ndarray   # (k, 2) float64, pixel coordinates
    covs2d: np.ndarray    # (k, 3) float64, (xx, xy, yy)
    depths: np.ndarray    # (k,) float64, camera-space z
    opacities: np.ndarray  # (k,) float64
    radii: np.ndarray     # (k,) float64, screen extent in pixels

    def __len__(self) -> int:
        return self.ids.shape[0]


@dataclass
class WeightFragmentBuffer:
    """Per-pixel ordered blending contributions for one view.

    Fragments are stored CSR-style over row-major flattened pixels:
    pixel p owns ``slice(offsets[p], offsets[p+1])`` of the id/alpha/weight
    arrays, in front-to-back blend order.
    """

    width: int
    height: int
    n_gaussians: int                 # active Gaussian count of the scene
    offsets: np.ndarray              # (H*W + 1,) int64
    gaussian_ids: np.ndarray         # (nnz,) int32
    alphas: np.ndarray               # (nnz,) float64
    weights: np.ndarray              # (nnz,) float64
    skipped_singular: int = 0
    _sparse: sp.csr_matrix | None = field(default=None, repr=False, compare=False)
    _sparse_t: sp.csr_matrix | None = field(default=None, repr=False, compare=False)
    _weight_sums: np.ndarray | None = field(default=None, repr=False, compare=False)
    _hit_counts: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def n_fragments(self) -> int:
        return self.gaussian_ids.shape[0]

    def pixel_fragments(self, x: int, y: int):
        """(ids, alphas, weights) for pixel (x, y), front to back."""
        p = y * self.width + x
        s = slice(self.offsets[p], self.offsets[p + 1])
        return self.gaussian_ids[s], self.alphas[s], self.weights[s]

    def to_sparse(self, transpose: bool = False) -> sp.csr_matrix:
        """The rendering operator as a sparse (pixels x gaussians) matrix.

        Memoized (fragments are immutable once built), so repeated renders
        and uplifts over the same buffer pay conversion cost once.
        """
        if transpose:
            if self._sparse_t is None:
                self._sparse_t = self.to_sparse().T.tocsr()
            return self._sparse_t
        if self._sparse is None:
            indptr = self.offsets.astype(np.int64)
            self._sparse = sp.csr_matrix(
                (self.weights, self.gaussian_ids.astype(np.int64), indptr),
                shape=(self.width * self.height, self.n_gaussians),
            )
        return self._sparse

    def weight_sums(self) -> np.ndarray:
        """Per-Gaussian total blend weight over this view (memoized)."""
        if self._weight_sums is None:
            self._weight_sums = np.bincount(
                self.gaussian_ids, weights=self.weights,
                minlength=self.n_gaussians,
            )
        return self._weight_sums

    def hit_counts(self) -> np.ndarray:
        """Per-Gaussian fragment count over this view (memoized)."""
        if self._hit_counts is None:
            self._hit_counts = np.bincount(
                self.gaussian_ids, minlength=self.n_gaussians,
            ).astype(np.float64)
        return self._hit_counts

    def alpha_image(self) -> np.ndarray:
        """Accumulated opacity per pixel (sum of blend weights)."""
        sums = np.add.reduceat(
            np.concatenate([self.weights, [0.0]]),
            self.offsets[:-1],
        )
        sums[np.diff(self.offsets) == 0] = 0.0
        return sums.reshape(self.height, self.width)


@dataclass
class RenderOutput:
    channels: np.ndarray  # (H, W, c)
    alpha: np.ndarray     # (H, W)


def _empty_buffer(cam: Camera, n_active: int, skipped: int = 0) -> WeightFragmentBuffer:
    return WeightFragmentBuffer(
        width=cam.width, height=cam.height, n_gaussians=n_active,
        offsets=np.zeros(cam.width * cam.height + 1, dtype=np.int64),
        gaussian_ids=np.empty(0, dtype=np.int32),
        alphas=np.empty(0, dtype=np.float64),
        weights=np.empty(0, dtype=np.float64),
        skipped_singular=skipped,
    )


def project(scene: GaussianScene, cam: Camera,
            settings: RasterSettings = DEFAULT_SETTINGS) -> ProjectedGaussians:
    """Project active Gaussians to screen space (EWA-style).

    The 2D covariance is J W Sigma W^T J^T with J the Jacobian of the
    perspective projection at the Gaussian mean and W the camera rotation,
    plus a ``cov_regularization``-pixel diagonal term. Gaussians behind the
    near plane or whose 3-sigma extent misses the frame are culled.
    """
    idx = scene.active_indices()
    if idx.size == 0:
        z = np.empty(0)
        return ProjectedGaussians(
            ids=np.empty(0, dtype=np.int32), means2d=np.empty((0, 2)),
            covs2d=np.empty((0, 3)), depths=z, opacities=z, radii=z,
        )
    means = scene.means[idx].astype(np.float64)
    w2c = cam.world_to_camera
    t = means @ w2c[:3, :3].T + w2c[:3, 3]
    tz = t[:, 2]
    front = tz > settings.near_plane
    t = t[front]
    tz = tz[front]
    local = np.flatnonzero(front)

    u = cam.fx * t[:, 0] / tz + cam.cx
    v = cam.fy * t[:, 1] / tz + cam.cy

    covs = scene.covariances(idx[local])
    R = w2c[:3, :3]
    cov_cam = R @ covs @ R.T  # (k, 3, 3)

    # Jacobian of (fx X/Z + cx, fy Y/Z + cy) wrt camera coordinates
    k = tz.shape[0]
    J = np.zeros((k, 2, 3))
    J[:, 0, 0] = cam.fx / tz
    J[:, 0, 2] = -cam.fx * t[:, 0] / tz**2
    J[:, 1, 1] = cam.fy / tz
    J[:, 1, 2] = -cam.fy * t[:, 1] / tz**2
    cov2d = J @ cov_cam @ np.transpose(J, (0, 2, 1))
    a = cov2d[:, 0, 0] + settings.cov_regularization
    b = cov2d[:, 0, 1]
    c = cov2d[:, 1, 1] + settings.cov_regularization

    # 3-sigma extent from the larger eigenvalue of the 2x2 covariance
    mid = 0.5 * (a + c)
    disc = np.sqrt(np.maximum(mid * mid - (a * c - b * b), 0.0))
    radius = settings.extent_sigmas * np.sqrt(np.maximum(mid + disc, 0.0))

    visible = (
        (u + radius > 0.0) & (u - radius < cam.width)
        & (v + radius > 0.0) & (v - radius < cam.height)
    )
    sel = np.flatnonzero(visible)
    return ProjectedGaussians(
        ids=local[sel].astype(np.int32),
        means2d=np.stack([u[sel], v[sel]], axis=1),
        covs2d=np.stack([a[sel], b[sel], c[sel]], axis=1),
        depths=tz[sel],
        opacities=scene.opacities[idx[local[sel]]].astype(np.float64),
        radii=radius[sel],
    )


def _tile_bins(proj: ProjectedGaussians, cam: Camera, tile: int):
    """Assign each projected Gaussian to the tiles its extent box overlaps.

    Returns (tile_of_pair, order_of_pair) sorted by tile, preserving the
    incoming (depth) order within each tile.
    """
    n_tx = (cam.width + tile - 1) // tile
    n_ty = (cam.height + tile - 1) // tile
    x0 = np.clip(np.floor((proj.means2d[:, 0] - proj.radii) / tile), 0, n_tx).astype(np.int64)
    x1 = np.clip(np.floor((proj.means2d[:, 0] + proj.radii) / tile) + 1, 0, n_tx).astype(np.int64)
    y0 = np.clip(np.floor((proj.means2d[:, 1] - proj.radii) / tile), 0, n_ty).astype(np.int64)
    y1 = np.clip(np.floor((proj.means2d[:, 1] + proj.radii) / tile) + 1, 0, n_ty).astype(np.int64)
    spans_x = np.maximum(x1 - x0, 0)
    spans_y = np.maximum(y1 - y0, 0)
    counts = spans_x * spans_y
    total = int(counts.sum())
    if total == 0:
        return (np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64), n_tx, n_ty)

    owner = np.repeat(np.arange(len(proj)), counts)
    # per-pair offset within its Gaussian's tile rectangle
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    within = np.arange(total) - np.repeat(starts, counts)
    tx = x0[owner] + within % np.maximum(spans_x[owner], 1)
    ty = y0[owner] + within // np.maximum(spans_x[owner], 1)
    tile_id = ty * n_tx + tx
    order = np.argsort(tile_id, kind="stable")
    return tile_id[order], owner[order], n_tx, n_ty


def rasterize_weights(scene: GaussianScene, cam: Camera,
                      settings: RasterSettings = DEFAULT_SETTINGS) -> WeightFragmentBuffer:
    """Compute the per-pixel ordered blend weights for one view."""
    n_active = scene.n_active
    proj = project(scene, cam, settings)
    if len(proj) == 0:
        return _empty_buffer(cam, n_active)

    # global front-to-back order; depth ties break by Gaussian index
    order = np.lexsort((proj.ids, proj.depths))
    ids = proj.ids[order]
    means2d = proj.means2d[order]
    covs2d = proj.covs2d[order]
    opac = proj.opacities[order]

    a, b, c = covs2d[:, 0], covs2d[:, 1], covs2d[:, 2]
    det = a * c - b * b
    ok = det > 0
    skipped = int((~ok).sum())
    if skipped:
        ids, means2d, opac = ids[ok], means2d[ok], opac[ok]
        a, b, c, det = a[ok], b[ok], c[ok], det[ok]
        order = order[ok]
    conic = np.stack([c / det, -b / det, a / det], axis=1)

    radii = proj.radii[order]
    proj_sorted = ProjectedGaussians(
        ids=ids, means2d=means2d, covs2d=np.stack([a, b, c], axis=1),
        depths=proj.depths[order], opacities=opac, radii=radii,
    )
    tile = settings.tile_size
    tile_ids, owners, n_tx, _ = _tile_bins(proj_sorted, cam, tile)
    if tile_ids.size == 0:
        return _empty_buffer(cam, n_active, skipped)

    frag_pix: list[np.ndarray] = []
    frag_ids: list[np.ndarray] = []
    frag_alpha: list[np.ndarray] = []
    frag_w: list[np.ndarray] = []

    boundaries = np.flatnonzero(np.diff(tile_ids)) + 1
    run_starts = np.concatenate([[0], boundaries])
    run_ends = np.concatenate([boundaries, [tile_ids.size]])

    for s, e in zip(run_starts, run_ends):
        t_id = tile_ids[s]
        cand = owners[s:e]  # in depth order
        tx, ty = t_id % n_tx, t_id // n_tx
        px0, py0 = tx * tile, ty * tile
        pw = min(tile, cam.width - px0)
        ph = min(tile, cam.height - py0)
        xs = px0 + 0.5 + np.arange(pw)
        ys = py0 + 0.5 + np.arange(ph)
        iy = py0 + np.arange(ph, dtype=np.int64)
        ix = px0 + np.arange(pw, dtype=np.int64)
        flat_pix = (np.repeat(iy, pw) * cam.width + np.tile(ix, ph))

        dx = xs[None, :] - means2d[cand, 0:1]          # (G, pw)
        dy = ys[None, :] - means2d[cand, 1:2]          # (G, ph)
        A, B, C = conic[cand, 0:1], conic[cand, 1:2], conic[cand, 2:3]
        # quadratic form expanded over the pixel block: (G, ph, pw)
        power = -0.5 * (
            A[:, :, None] * (dx * dx)[:, None, :]
            + C[:, :, None] * (dy * dy)[:, :, None]
        ) - B[:, :, None] * dy[:, :, None] * dx[:, None, :]
        alpha = opac[cand, None, None] * np.exp(np.minimum(power, 0.0))
        alpha = alpha.reshape(len(cand), ph * pw)
        alpha = np.minimum(alpha, settings.alpha_clamp)
        alpha[alpha < settings.alpha_min] = 0.0

        one_minus = 1.0 - alpha
        t_after = np.cumprod(one_minus, axis=0)
        t_before = np.empty_like(t_after)
        t_before[0] = 1.0
        t_before[1:] = t_after[:-1]
        included = (alpha > 0.0) & (t_after >= settings.transmittance_min)
        if not included.any():
            continue
        weights = alpha * t_before

        inc_t = included.T  # (P, G): nonzero scan yields blend order per pixel
        p_loc, g_loc = np.nonzero(inc_t)
        frag_pix.append(flat_pix[p_loc])
        frag_ids.append(ids[cand[g_loc]])
        frag_alpha.append(alpha[g_loc, p_loc])
        frag_w.append(weights[g_loc, p_loc])

    if not frag_pix:
        return _empty_buffer(cam, n_active, skipped)

    pix = np.concatenate(frag_pix)
    gids = np.concatenate(frag_ids).astype(np.int32)
    alphas = np.concatenate(frag_alpha)
    weights = np.concatenate(frag_w)
    # group by pixel; each pixel lives in exactly one tile, so a stable sort
    # keeps its fragments in blend order
    perm = np.argsort(pix, kind="stable")
    pix, gids, alphas, weights = pix[perm], gids[perm], alphas[perm], weights[perm]
    counts = np.bincount(pix, minlength=cam.width * cam.height)
    offsets = np.zeros(cam.width * cam.height + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return WeightFragmentBuffer(
        width=cam.width, height=cam.height, n_gaussians=n_active,
        offsets=offsets, gaussian_ids=gids, alphas=alphas, weights=weights,
        skipped_singular=skipped,
    )


def sh_colors(scene: GaussianScene, cam: Camera) -> np.ndarray:
    """Per-active-Gaussian RGB evaluated for the camera's view directions."""
    idx = scene.active_indices()
    dirs = scene.means[idx].astype(np.float64) - cam.center
    norms = np.linalg.norm(dirs, axis=1, keepdims=True)
    dirs = np.where(norms > 0, dirs / np.maximum(norms, 1e-12), 0.0)
    return eval_sh(scene.sh_coeffs[idx].astype(np.float64), dirs)


def render(scene: GaussianScene, cam: Camera,
           features: np.ndarray | None = None,
           buffer: WeightFragmentBuffer | None = None,
           background: np.ndarray | None = None,
           settings: RasterSettings = DEFAULT_SETTINGS) -> RenderOutput:
    """Render per-Gaussian features (or SH colors when ``features`` is None).

    The output is the fragment buffer applied as a linear operator: channel
    values are sums of ``weight * feature`` over each pixel's fragments.
    ``background`` (per channel) fills the remaining ``1 - alpha``.
    """
    if buffer is None:
        buffer = rasterize_weights(scene, cam, settings)
    if features is None:
        features = sh_colors(scene, cam)
    features = np.asarray(features, dtype=np.float64)
    if features.ndim == 1:
        features = features[:, None]
    if features.shape[0] != buffer.n_gaussians:
        raise ValidationError(
            f"feature rows ({features.shape[0]}) != active Gaussians "
            f"({buffer.n_gaussians})"
        )
    op = buffer.to_sparse()
    channels = (op @ features).reshape(buffer.height, buffer.width, -1)
    alpha = buffer.alpha_image()
    if background is not None:
        background = np.asarray(background, dtype=np.float64).reshape(1, 1, -1)
        channels = channels + (1.0 - alpha)[:, :, None] * background
    return RenderOutput(channels=channels, alpha=alpha)
