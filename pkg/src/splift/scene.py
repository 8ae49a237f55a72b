"""Gaussian Splatting scene model: loading, saving, and basic geometry.

Scenes are stored as struct-of-arrays (means, scales, rotations, opacities,
SH coefficients) plus a camera registry. On-disk encoding follows the common
3DGS convention: binary little-endian PLY with logit-encoded opacity,
log-encoded scales, and SH color split into ``f_dc_*`` / ``f_rest_*``
properties. All encodings are decoded on load.

A scene is immutable after loading; mutating operations return a new scene
that shares the parameter arrays and carries its own ``active_mask``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import FormatError, ValidationError

# Real spherical harmonics basis constants, degrees 0..3.
SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)

# coefficient counts per degree: 1, 4, 9, 16
_SH_COEFFS_FOR_DEGREE = {0: 1, 1: 4, 2: 9, 3: 16}


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


@dataclass
class Gaussian:
    """A single 3D Gaussian primitive (decoded parameters)."""

    mean: np.ndarray        # (3,)
    scale: np.ndarray       # (3,) linear standard deviations
    rotation: np.ndarray    # (4,) unit quaternion, (w, x, y, z)
    opacity: float          # in (0, 1)
    sh_coeffs: np.ndarray   # (n_coeffs, 3), row 0 is the DC term


@dataclass
class Camera:
    """Pinhole camera with a rigid world-to-camera transform."""

    id: str
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    world_to_camera: np.ndarray  # (4, 4), row-major rigid transform

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValidationError(
                f"camera {self.id!r}: width/height must be positive, "
                f"got {self.width}x{self.height}"
            )
        w2c = np.asarray(self.world_to_camera, dtype=np.float64)
        if w2c.shape != (4, 4):
            raise ValidationError(
                f"camera {self.id!r}: world_to_camera must be 4x4, got {w2c.shape}"
            )
        R = w2c[:3, :3]
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-5):
            raise ValidationError(
                f"camera {self.id!r}: rotation block is not orthonormal"
            )
        if not np.isclose(np.linalg.det(R), 1.0, atol=1e-5):
            raise ValidationError(
                f"camera {self.id!r}: rotation block has det != +1"
            )
        self.world_to_camera = w2c

    @property
    def rotation(self) -> np.ndarray:
        return self.world_to_camera[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.world_to_camera[:3, 3]

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation


@dataclass
class GaussianScene:
    """A set of 3D Gaussians with decoded parameters and a camera registry.

    ``active_mask`` tracks pruning/removal state; inactive Gaussians are
    excluded from rasterization and from saved files.
    """

    means: np.ndarray       # (n, 3) float32
    scales: np.ndarray      # (n, 3) float32, linear
    rotations: np.ndarray   # (n, 4) float32, unit quaternions (w, x, y, z)
    opacities: np.ndarray   # (n,) float32 in (0, 1)
    sh_coeffs: np.ndarray   # (n, n_coeffs, 3) float32
    cameras: list[Camera] = field(default_factory=list)
    active_mask: np.ndarray | None = None  # (n,) bool

    def __post_init__(self):
        n = self.means.shape[0]
        if self.active_mask is None:
            self.active_mask = np.ones(n, dtype=bool)
        if self.active_mask.shape != (n,):
            raise ValidationError(
                f"active_mask length {self.active_mask.shape} != n={n}"
            )
        ids = [c.id for c in self.cameras]
        if len(set(ids)) != len(ids):
            raise ValidationError("camera ids are not unique")

    @property
    def n_total(self) -> int:
        return self.means.shape[0]

    @property
    def n_active(self) -> int:
        return int(self.active_mask.sum())

    @property
    def sh_degree(self) -> int:
        n_coeffs = self.sh_coeffs.shape[1]
        for deg, count in _SH_COEFFS_FOR_DEGREE.items():
            if count == n_coeffs:
                return deg
        raise ValidationError(f"unsupported SH coefficient count {n_coeffs}")

    def active_indices(self) -> np.ndarray:
        return np.flatnonzero(self.active_mask)

    def gaussian(self, i: int) -> Gaussian:
        return Gaussian(
            mean=self.means[i],
            scale=self.scales[i],
            rotation=self.rotations[i],
            opacity=float(self.opacities[i]),
            sh_coeffs=self.sh_coeffs[i],
        )

    def camera_by_id(self, camera_id: str) -> Camera:
        for c in self.cameras:
            if c.id == camera_id:
                return c
        raise ValidationError(f"unknown camera id {camera_id!r}")

    def covariances(self, indices: np.ndarray | None = None) -> np.ndarray:
        """Vectorized R diag(scale^2) R^T for the given (default: all) rows."""
        if indices is None:
            R = quat_to_rotmat(self.rotations)
            s2 = self.scales.astype(np.float64) ** 2
        else:
            R = quat_to_rotmat(self.rotations[indices])
            s2 = self.scales[indices].astype(np.float64) ** 2
        return np.einsum("nij,nj,nkj->nik", R, s2, R)


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Unit quaternion(s) (w, x, y, z) to rotation matrix/matrices."""
    q = np.asarray(q, dtype=np.float64)
    single = q.ndim == 1
    q = np.atleast_2d(q)
    q = q / np.linalg.norm(q, axis=1, keepdims=True)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    R = np.empty((q.shape[0], 3, 3))
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R[0] if single else R


def covariance_of(g: Gaussian) -> np.ndarray:
    """3x3 covariance R diag(scale^2) R^T of a single Gaussian."""
    R = quat_to_rotmat(g.rotation)
    cov = R @ np.diag(np.asarray(g.scale, dtype=np.float64) ** 2) @ R.T
    return 0.5 * (cov + cov.T)


def eval_sh(sh_coeffs: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Evaluate spherical-harmonic colors for unit view directions.

    ``sh_coeffs`` is (n, n_coeffs, 3); ``dirs`` is (n, 3) unit vectors from
    camera center to Gaussian mean. Returns (n, 3) colors, offset by +0.5
    and clamped at 0 following the usual splatting convention.
    """
    n_coeffs = sh_coeffs.shape[1]
    c = SH_C0 * sh_coeffs[:, 0]
    if n_coeffs > 1:
        x, y, z = dirs[:, 0:1], dirs[:, 1:2], dirs[:, 2:3]
        c = c - SH_C1 * y * sh_coeffs[:, 1] + SH_C1 * z * sh_coeffs[:, 2] \
            - SH_C1 * x * sh_coeffs[:, 3]
    if n_coeffs > 4:
        x, y, z = dirs[:, 0:1], dirs[:, 1:2], dirs[:, 2:3]
        xx, yy, zz = x * x, y * y, z * z
        xy, yz, xz = x * y, y * z, x * z
        c = (c
             + SH_C2[0] * xy * sh_coeffs[:, 4]
             + SH_C2[1] * yz * sh_coeffs[:, 5]
             + SH_C2[2] * (2.0 * zz - xx - yy) * sh_coeffs[:, 6]
             + SH_C2[3] * xz * sh_coeffs[:, 7]
             + SH_C2[4] * (xx - yy) * sh_coeffs[:, 8])
    if n_coeffs > 9:
        c = (c
             + SH_C3[0] * y * (3 * xx - yy) * sh_coeffs[:, 9]
             + SH_C3[1] * xy * z * sh_coeffs[:, 10]
             + SH_C3[2] * y * (4 * zz - xx - yy) * sh_coeffs[:, 11]
             + SH_C3[3] * z * (2 * zz - 3 * xx - 3 * yy) * sh_coeffs[:, 12]
             + SH_C3[4] * x * (4 * zz - xx - yy) * sh_coeffs[:, 13]
             + SH_C3[5] * z * (xx - yy) * sh_coeffs[:, 14]
             + SH_C3[6] * x * (xx - 3 * yy) * sh_coeffs[:, 15])
    return np.maximum(c + 0.5, 0.0)


# ---------------------------------------------------------------------------
# PLY I/O
# ---------------------------------------------------------------------------

_REQUIRED_PROPS = (
    "x", "y", "z", "opacity",
    "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
    "f_dc_0", "f_dc_1", "f_dc_2",
)

_PLY_TYPES = {
    "float": ("<f4", 4), "float32": ("<f4", 4),
    "double": ("<f8", 8), "float64": ("<f8", 8),
    "uchar": ("<u1", 1), "uint8": ("<u1", 1),
    "int": ("<i4", 4), "int32": ("<i4", 4),
}


def _parse_ply_header(f):
    """Parse a binary-little-endian PLY header; returns (count, props, offset)."""
    magic = f.readline()
    if magic.strip() != b"ply":
        raise FormatError("not a PLY file: missing 'ply' magic", offset=0)
    count = None
    props = []
    fmt_seen = False
    while True:
        line = f.readline()
        if not line:
            raise FormatError("unterminated PLY header", offset=f.tell())
        tokens = line.decode("ascii", errors="replace").split()
        if not tokens:
            continue
        if tokens[0] == "format":
            if tokens[1] != "binary_little_endian":
                raise FormatError(
                    f"unsupported PLY format {tokens[1]!r}; "
                    "expected binary_little_endian"
                )
            fmt_seen = True
        elif tokens[0] == "element":
            if tokens[1] != "vertex":
                raise FormatError(f"unsupported PLY element {tokens[1]!r}")
            count = int(tokens[2])
        elif tokens[0] == "property":
            if tokens[1] not in _PLY_TYPES:
                raise FormatError(f"unsupported PLY property type {tokens[1]!r}")
            props.append((tokens[2], _PLY_TYPES[tokens[1]][0]))
        elif tokens[0] == "end_header":
            break
    if not fmt_seen or count is None:
        raise FormatError("malformed PLY header: missing format/element lines")
    return count, props, f.tell()


def load_scene(ply_path, cameras_path=None) -> GaussianScene:
    """Load a scene from a 3DGS-style PLY plus an optional camera JSON file.

    Decodes opacity (sigmoid), scales (exp) and normalizes quaternions.
    All Gaussians start active.
    """
    with open(ply_path, "rb") as f:
        count, props, data_offset = _parse_ply_header(f)
        names = [name for name, _ in props]
        for req in _REQUIRED_PROPS:
            if req not in names:
                raise FormatError(
                    f"PLY header is missing required property {req!r}"
                )
        dtype = np.dtype([(name, typ) for name, typ in props])
        raw = f.read(count * dtype.itemsize)
        if len(raw) < count * dtype.itemsize:
            raise FormatError(
                f"truncated PLY payload: expected {count * dtype.itemsize} bytes, "
                f"got {len(raw)}",
                offset=data_offset + len(raw),
            )
        data = np.frombuffer(raw, dtype=dtype, count=count)

    means = np.stack([data["x"], data["y"], data["z"]], axis=1).astype(np.float32)
    scales = np.exp(
        np.stack([data["scale_0"], data["scale_1"], data["scale_2"]], axis=1)
        .astype(np.float64)
    ).astype(np.float32)
    quats = np.stack(
        [data["rot_0"], data["rot_1"], data["rot_2"], data["rot_3"]], axis=1
    ).astype(np.float64)
    norms = np.linalg.norm(quats, axis=1, keepdims=True)
    bad = np.flatnonzero(~np.isfinite(norms[:, 0]) | (norms[:, 0] == 0))
    if bad.size:
        raise ValidationError(f"Gaussian {bad[0]}: degenerate quaternion")
    rotations = (quats / norms).astype(np.float32)
    opacities = sigmoid(data["opacity"]).astype(np.float32)

    rest_names = sorted(
        (n for n in names if n.startswith("f_rest_")),
        key=lambda n: int(n.split("_")[-1]),
    )
    n_rest = len(rest_names) // 3
    n_coeffs = 1 + n_rest
    if n_coeffs not in _SH_COEFFS_FOR_DEGREE.values():
        # clamp to the largest complete degree the file provides
        n_coeffs = max(c for c in _SH_COEFFS_FOR_DEGREE.values() if c <= n_coeffs)
        n_rest = n_coeffs - 1
    sh = np.zeros((count, n_coeffs, 3), dtype=np.float32)
    sh[:, 0, 0] = data["f_dc_0"]
    sh[:, 0, 1] = data["f_dc_1"]
    sh[:, 0, 2] = data["f_dc_2"]
    # 3DGS stores higher-order coefficients channel-major: f_rest_{ch*n_rest + j}
    for ch in range(3):
        for j in range(n_rest):
            sh[:, 1 + j, ch] = data[rest_names[ch * n_rest + j]]

    for name, arr in (("mean", means), ("scale", scales),
                      ("opacity", opacities), ("sh", sh)):
        flat = arr.reshape(count, -1) if count else arr
        nonfinite = ~np.isfinite(flat).all(axis=1) if count else np.empty(0, bool)
        if nonfinite.any():
            idx = int(np.flatnonzero(nonfinite)[0])
            raise ValidationError(f"Gaussian {idx}: non-finite {name} values")

    cameras = load_cameras(cameras_path) if cameras_path else []
    return GaussianScene(
        means=means, scales=scales, rotations=rotations,
        opacities=opacities, sh_coeffs=sh, cameras=cameras,
    )


def save_scene(scene: GaussianScene, ply_path) -> None:
    """Write active Gaussians as a 3DGS-style binary PLY (inverse encodings)."""
    idx = scene.active_indices()
    n = idx.size
    n_rest = scene.sh_coeffs.shape[1] - 1
    names = ["x", "y", "z", "nx", "ny", "nz",
             "f_dc_0", "f_dc_1", "f_dc_2"]
    names += [f"f_rest_{i}" for i in range(3 * n_rest)]
    names += ["opacity", "scale_0", "scale_1", "scale_2",
              "rot_0", "rot_1", "rot_2", "rot_3"]
    dtype = np.dtype([(name, "<f4") for name in names])
    out = np.zeros(n, dtype=dtype)
    means = scene.means[idx]
    out["x"], out["y"], out["z"] = means[:, 0], means[:, 1], means[:, 2]
    for ch in range(3):
        out[f"f_dc_{ch}"] = scene.sh_coeffs[idx, 0, ch]
        for j in range(n_rest):
            out[f"f_rest_{ch * n_rest + j}"] = scene.sh_coeffs[idx, 1 + j, ch]
    out["opacity"] = logit(scene.opacities[idx]).astype(np.float32)
    logs = np.log(scene.scales[idx].astype(np.float64)).astype(np.float32)
    out["scale_0"], out["scale_1"], out["scale_2"] = logs[:, 0], logs[:, 1], logs[:, 2]
    quats = scene.rotations[idx]
    for k in range(4):
        out[f"rot_{k}"] = quats[:, k]

    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property float {name}" for name in names]
    header.append("end_header")
    with open(ply_path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(out.tobytes())


def load_cameras(path) -> list[Camera]:
    """Load the camera registry: JSON array of intrinsics + 16-float transforms."""
    with open(path) as f:
        entries = json.load(f)
    if not isinstance(entries, list):
        raise FormatError("camera file must contain a JSON array")
    cameras = []
    required = ("id", "width", "height", "fx", "fy", "cx", "cy", "world_to_camera")
    for e in entries:
        for key in required:
            if key not in e:
                raise FormatError(f"camera entry missing field {key!r}")
        w2c = np.asarray(e["world_to_camera"], dtype=np.float64).reshape(4, 4)
        cameras.append(Camera(
            id=str(e["id"]), width=int(e["width"]), height=int(e["height"]),
            fx=float(e["fx"]), fy=float(e["fy"]),
            cx=float(e["cx"]), cy=float(e["cy"]),
            world_to_camera=w2c,
        ))
    return cameras


def save_cameras(cameras: list[Camera], path) -> None:
    entries = [
        {
            "id": c.id, "width": c.width, "height": c.height,
            "fx": c.fx, "fy": c.fy, "cx": c.cx, "cy": c.cy,
            "world_to_camera": [float(v) for v in c.world_to_camera.reshape(-1)],
        }
        for c in cameras
    ]
    with open(path, "w") as f:
        json.dump(entries, f, indent=1)


def remove_gaussians(scene: GaussianScene, mask3d: np.ndarray,
                     threshold: float) -> GaussianScene:
    """Deactivate Gaussians whose mask value is >= threshold.

    ``mask3d`` may be given over all Gaussians or over the active subset
    (e.g. a diffusion output); surviving Gaussians keep their parameters.
    """
    mask3d = np.asarray(mask3d, dtype=np.float64).reshape(-1)
    new_mask = scene.active_mask.copy()
    if mask3d.shape[0] == scene.n_total:
        new_mask &= ~(mask3d >= threshold)
    elif mask3d.shape[0] == scene.n_active:
        idx = scene.active_indices()
        new_mask[idx[mask3d >= threshold]] = False
    else:
        raise ValidationError(
            f"mask3d length {mask3d.shape[0]} matches neither total "
            f"({scene.n_total}) nor active ({scene.n_active}) Gaussian count"
        )
    return replace(scene, active_mask=new_mask)
