"""Feature-map containers, PCA reduction, patch aggregation, thresholding.

Dense 2D feature maps and per-Gaussian feature matrices travel in the SPLF
binary tensor container::

    magic "SPLF" | version u32 | rank u32 | dims u64[rank] | dtype u8 | payload

with little-endian row-major float32 payload (dtype code 0). Masks travel as
8-bit grayscale PNG/PGM. Patch grids (low-resolution embeddings covering a
crop of the source image) pair an SPLF file with a JSON sidecar.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FormatError, ValidationError

_MAGIC = b"SPLF"
_VERSION = 1
_DTYPE_F32 = 0


@dataclass
class FeatureMap:
    """A dense H x W x c per-pixel feature image tied to a camera."""

    data: np.ndarray
    camera_id: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or data.shape[2] < 1:
            raise ValidationError(f"feature map must be HxWxc, got {data.shape}")
        if not np.isfinite(data).all():
            raise ValidationError("feature map contains non-finite values")
        self.data = data

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass
class PatchGrid:
    """Patch-level embeddings covering a crop of the source image.

    ``crop_rect`` is (x0, y0, x1, y1) with exclusive upper bounds; the crop
    must be tiled exactly by ``h x w`` patches of ``patch_size`` pixels.
    """

    patches: np.ndarray  # (h, w, c)
    crop_rect: tuple[int, int, int, int]
    patch_size: int
    camera_id: str = ""

    def __post_init__(self):
        p = np.asarray(self.patches, dtype=np.float64)
        if p.ndim != 3:
            raise ValidationError(f"patches must be h x w x c, got {p.shape}")
        self.patches = p
        x0, y0, x1, y1 = self.crop_rect
        h, w = p.shape[:2]
        if (x1 - x0) != w * self.patch_size or (y1 - y0) != h * self.patch_size:
            raise ValidationError(
                f"crop {self.crop_rect} is not tiled by {h}x{w} patches "
                f"of size {self.patch_size}"
            )


# ---------------------------------------------------------------------------
# SPLF container
# ---------------------------------------------------------------------------

def write_feature_container(path, array: np.ndarray) -> None:
    """Write a tensor to the SPLF container (float32 payload)."""
    array = np.ascontiguousarray(array, dtype=np.float32)
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<II", _VERSION, array.ndim))
        f.write(struct.pack(f"<{array.ndim}Q", *array.shape))
        f.write(struct.pack("<B", _DTYPE_F32))
        f.write(array.tobytes())


def read_feature_container(path) -> np.ndarray:
    """Read a tensor from the SPLF container."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != _MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {_MAGIC!r}", offset=0)
    if len(blob) < 12:
        raise FormatError("truncated header", offset=len(blob))
    version, rank = struct.unpack_from("<II", blob, 4)
    if version != _VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    pos = 12
    if len(blob) < pos + 8 * rank + 1:
        raise FormatError("truncated dims", offset=len(blob))
    dims = struct.unpack_from(f"<{rank}Q", blob, pos)
    pos += 8 * rank
    (dtype_code,) = struct.unpack_from("<B", blob, pos)
    pos += 1
    if dtype_code != _DTYPE_F32:
        raise FormatError(f"unsupported dtype code {dtype_code}", offset=pos - 1)
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    expected = count * 4
    payload = blob[pos:]
    if len(payload) != expected:
        raise FormatError(
            f"payload length mismatch: expected {expected} bytes, "
            f"got {len(payload)}",
            offset=pos,
        )
    return np.frombuffer(payload, dtype="<f4").reshape(dims).copy()


def write_feature_map(path, fmap: FeatureMap) -> None:
    """FeatureMap to SPLF; the file stem conventionally carries the camera id."""
    write_feature_container(path, fmap.data)
    if fmap.meta:
        Path(str(path) + ".json").write_text(json.dumps(fmap.meta))


def read_feature_map(path, camera_id: str | None = None) -> FeatureMap:
    data = read_feature_container(path)
    if data.ndim == 2:
        data = data[:, :, None]
    if data.ndim != 3:
        raise FormatError(f"feature map container must be rank 2 or 3, got rank {data.ndim}")
    if camera_id is None:
        camera_id = Path(path).stem
    meta = {}
    sidecar = Path(str(path) + ".json")
    if sidecar.exists():
        meta = json.loads(sidecar.read_text())
    return FeatureMap(data=data, camera_id=camera_id, meta=meta)


def write_patch_grid(path, grid: PatchGrid) -> None:
    write_feature_container(path, grid.patches)
    sidecar = {
        "camera_id": grid.camera_id,
        "crop_rect": list(grid.crop_rect),
        "patch_size": grid.patch_size,
    }
    Path(str(path) + ".json").write_text(json.dumps(sidecar))


def read_patch_grid(path) -> PatchGrid:
    patches = read_feature_container(path)
    sidecar_path = Path(str(path) + ".json")
    if not sidecar_path.exists():
        raise FormatError(f"patch grid sidecar {sidecar_path} not found")
    sidecar = json.loads(sidecar_path.read_text())
    return PatchGrid(
        patches=patches,
        crop_rect=tuple(sidecar["crop_rect"]),
        patch_size=int(sidecar["patch_size"]),
        camera_id=sidecar.get("camera_id", ""),
    )


# ---------------------------------------------------------------------------
# Masks (8-bit grayscale PNG / PGM)
# ---------------------------------------------------------------------------

def read_mask(path) -> FeatureMap:
    """Load an 8-bit grayscale mask, scaled to [0, 1]."""
    img = Image.open(path)
    if img.mode == "1":
        img = img.convert("L")
    if img.mode != "L":
        raise FormatError(
            f"mask {path} is not 8-bit grayscale (mode {img.mode!r})"
        )
    data = np.asarray(img, dtype=np.float64) / 255.0
    return FeatureMap(data=data[:, :, None], camera_id=Path(path).stem)


def write_mask(path, mask: np.ndarray | FeatureMap) -> None:
    """Write values in [0, 1] as an 8-bit grayscale PNG or PGM."""
    data = mask.data if isinstance(mask, FeatureMap) else np.asarray(mask)
    data = np.squeeze(np.asarray(data, dtype=np.float64))
    if data.ndim != 2:
        raise ValidationError(f"mask must be 2D, got shape {data.shape}")
    img = Image.fromarray(
        np.clip(np.round(data * 255.0), 0, 255).astype(np.uint8), mode="L"
    )
    img.save(path)


# ---------------------------------------------------------------------------
# Resampling and patch aggregation
# ---------------------------------------------------------------------------

def bilinear_resize(data: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resampling with half-pixel centers and edge clamping."""
    data = np.asarray(data, dtype=np.float64)
    squeeze = data.ndim == 2
    if squeeze:
        data = data[:, :, None]
    in_h, in_w = data.shape[:2]
    sy = (np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5
    sx = (np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5
    sy = np.clip(sy, 0.0, in_h - 1.0)
    sx = np.clip(sx, 0.0, in_w - 1.0)
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (sy - y0)[:, None, None]
    wx = (sx - x0)[None, :, None]
    top = data[y0][:, x0] * (1 - wx) + data[y0][:, x1] * wx
    bot = data[y1][:, x0] * (1 - wx) + data[y1][:, x1] * wx
    out = top * (1 - wy) + bot * wy
    return out[:, :, 0] if squeeze else out


def sliding_window_aggregate(grids: list[PatchGrid],
                             image_dims: tuple[int, int]) -> FeatureMap:
    """Fuse overlapping patch grids into a per-pixel feature map.

    Each grid is bilinearly upsampled to its crop rectangle; pixels covered
    by several crops take the uniform average. Uncovered pixels are zero and
    trigger a coverage warning.
    """
    if not grids:
        raise ValidationError("no patch grids given")
    h, w = image_dims
    c = grids[0].patches.shape[2]
    acc = np.zeros((h, w, c))
    cover = np.zeros((h, w))
    for g in grids:
        if g.patches.shape[2] != c:
            raise ValidationError(
                f"channel mismatch across grids: {g.patches.shape[2]} vs {c}"
            )
        x0, y0, x1, y1 = g.crop_rect
        if x0 < 0 or y0 < 0 or x1 > w or y1 > h:
            raise ValidationError(f"crop {g.crop_rect} outside image {w}x{h}")
        up = bilinear_resize(g.patches, y1 - y0, x1 - x0)
        acc[y0:y1, x0:x1] += up
        cover[y0:y1, x0:x1] += 1.0
    uncovered = cover == 0
    if uncovered.any():
        warnings.warn(
            f"{int(uncovered.sum())} pixels covered by no crop; set to zero",
            stacklevel=2,
        )
    out = np.where(uncovered[:, :, None], 0.0, acc / np.maximum(cover, 1.0)[:, :, None])
    return FeatureMap(data=out, camera_id=grids[0].camera_id)


# ---------------------------------------------------------------------------
# PCA
# ---------------------------------------------------------------------------

def pca_reduce(samples: np.ndarray, out_dim: int):
    """Mean-centered PCA onto the top principal directions.

    Returns ``(projection, projected)`` where the projection columns are
    orthonormal, ordered by decreasing explained variance, with sign fixed so
    each column's largest-magnitude entry is positive.
    """
    samples = np.asarray(samples, dtype=np.float64)
    n, c = samples.shape
    if out_dim > min(n, c):
        raise ValidationError(
            f"out_dim {out_dim} exceeds min(n={n}, c={c})"
        )
    mean = samples.mean(axis=0)
    centered = samples - mean
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    proj = vt[:out_dim].T  # (c, out_dim)
    peak = np.argmax(np.abs(proj), axis=0)
    signs = np.sign(proj[peak, np.arange(out_dim)])
    signs[signs == 0] = 1.0
    proj = proj * signs
    return proj, centered @ proj


def subsample_rows(matrix: np.ndarray, max_rows: int, seed: int = 0) -> np.ndarray:
    """Uniform row subsample without replacement (identity when small enough)."""
    matrix = np.asarray(matrix)
    if matrix.shape[0] <= max_rows:
        return matrix
    rng = np.random.Generator(np.random.Philox(key=seed))
    pick = rng.choice(matrix.shape[0], size=max_rows, replace=False)
    return matrix[np.sort(pick)]


# ---------------------------------------------------------------------------
# Automatic thresholding (256-bin histograms of min-max-normalized values)
# ---------------------------------------------------------------------------

def _histogram256(values: np.ndarray):
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if values.size == 0:
        raise ValidationError("cannot threshold empty input")
    vmin, vmax = values.min(), values.max()
    if not np.isfinite(vmin) or not np.isfinite(vmax):
        raise ValidationError("cannot threshold non-finite input")
    if vmin == vmax:
        raise ValidationError("threshold undefined for constant input")
    bins = np.minimum((values - vmin) / (vmax - vmin) * 256.0, 255.0).astype(np.int64)
    counts = np.bincount(bins, minlength=256).astype(np.float64)
    return counts, vmin, (vmax - vmin) / 256.0


def _valid_splits(counts: np.ndarray) -> np.ndarray:
    """Boundary indices t where both {bins < t} and {bins >= t} have mass."""
    csum = np.cumsum(counts)
    total = csum[-1]
    t = np.arange(1, 256)
    return t[(csum[t - 1] > 0) & (csum[t - 1] < total)]


def threshold_li_hist(counts: np.ndarray) -> int:
    """Minimum-cross-entropy split of a 256-bin histogram.

    Returns the boundary index t: bins < t are background, bins >= t are
    foreground. The cross-entropy criterion is evaluated on 1-based bin
    indices (keeping logarithms finite); the split minimizing it over all
    valid boundaries is returned, lowest index on ties.
    """
    counts = np.asarray(counts, dtype=np.float64).reshape(-1)
    if counts.shape[0] != 256:
        raise ValidationError(f"expected a 256-bin histogram, got {counts.shape}")
    if (counts > 0).sum() < 2:
        raise ValidationError("threshold undefined: fewer than 2 occupied bins")
    v = np.arange(256, dtype=np.float64) + 1.0
    c0 = np.cumsum(counts)
    m0 = np.cumsum(counts * v)
    splits = _valid_splits(counts)
    c_lo, m_lo = c0[splits - 1], m0[splits - 1]
    c_hi, m_hi = c0[-1] - c_lo, m0[-1] - m_lo
    mu_lo, mu_hi = m_lo / c_lo, m_hi / c_hi
    # cross entropy up to a data-only constant
    crit = -(m_lo * np.log(mu_lo) + m_hi * np.log(mu_hi))
    return int(splits[np.argmin(crit)])


def threshold_otsu_hist(counts: np.ndarray) -> int:
    """Maximal between-class-variance split of a 256-bin histogram."""
    counts = np.asarray(counts, dtype=np.float64).reshape(-1)
    if counts.shape[0] != 256:
        raise ValidationError(f"expected a 256-bin histogram, got {counts.shape}")
    if (counts > 0).sum() < 2:
        raise ValidationError("threshold undefined: fewer than 2 occupied bins")
    v = np.arange(256, dtype=np.float64)
    c0 = np.cumsum(counts)
    m0 = np.cumsum(counts * v)
    splits = _valid_splits(counts)
    w_lo, mu_sum = c0[splits - 1], m0[splits - 1]
    w_hi = c0[-1] - w_lo
    mu_lo = mu_sum / w_lo
    mu_hi = (m0[-1] - mu_sum) / w_hi
    between = w_lo * w_hi * (mu_lo - mu_hi) ** 2
    return int(splits[np.argmax(between)])


def threshold_li(values: np.ndarray) -> float:
    """Cross-entropy-minimizing threshold of an array, in value units.

    Values are min-max normalized into 256 bins; the returned threshold is
    the selected bin edge, so foreground is ``values >= threshold``.
    """
    counts, vmin, width = _histogram256(values)
    t = threshold_li_hist(counts)
    return float(vmin + t * width)


def threshold_otsu(values: np.ndarray) -> float:
    """Between-class-variance-maximizing threshold of an array, in value units."""
    counts, vmin, width = _histogram256(values)
    t = threshold_otsu_hist(counts)
    return float(vmin + t * width)
