"""Multi-view segmentation pipelines built on uplifted features.

A foreground annotation (scribbles or a full reference mask) on one view
seeds everything: it is uplifted into a per-Gaussian weight vector whose
positive entries form the anchor set, diffused through the feature graph,
and rendered back into any target view where mean-normalization and
thresholding produce binary masks. Pixel-level scorers (cosine-to-mean and
logistic) and the external mask-predictor prompt protocol live here too.
"""

from __future__ import annotations

import json
import subprocess
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.ndimage as ndi

from .errors import ValidationError
from .feature_io import (
    FeatureMap,
    read_mask,
    threshold_li,
    threshold_otsu,
    write_mask,
)
from .graph import GraphParams, build_graph, diffuse, fit_logistic, median_pairwise_distance, rbf_similarity, unit_rows
from .raster import DEFAULT_SETTINGS, RasterSettings, render
from .scene import Camera, GaussianScene
from .uplift import GaussianFeatures, reproject_mask, uplift


@dataclass
class ForegroundSpec:
    """Foreground annotation on a single reference view."""

    camera_id: str
    mask: FeatureMap          # c=1, values in [0, 1]; nonzero marks foreground
    kind: str = "scribbles"   # scribbles | reference_mask

    def __post_init__(self):
        if self.kind not in ("scribbles", "reference_mask"):
            raise ValidationError(f"unknown foreground kind {self.kind!r}")
        if self.mask.channels != 1:
            raise ValidationError("foreground mask must have a single channel")
        if not (self.mask.data > 0).any():
            raise ValidationError("foreground mask has no positive pixels")


@dataclass
class SegmentationConfig:
    tau: float = 0.4
    n_prompts: int = 3
    n_repeats: int = 10
    threshold_mode: str = "otsu"       # fixed | li | otsu
    threshold_value: float = 0.5       # used when threshold_mode == "fixed"
    scorer: str = "auto"               # auto | cosine | logistic
    graph: GraphParams = field(default_factory=GraphParams)
    diffusion_steps: int = 100
    g0_threshold: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.n_prompts < 1:
            raise ValidationError(f"n_prompts must be >= 1, got {self.n_prompts}")
        if self.tau <= 0:
            raise ValidationError(f"tau must be positive, got {self.tau}")
        if self.threshold_mode not in ("fixed", "li", "otsu", "tuned"):
            raise ValidationError(f"unknown threshold_mode {self.threshold_mode!r}")
        if self.scorer not in ("auto", "cosine", "logistic"):
            raise ValidationError(f"unknown scorer {self.scorer!r}")


@dataclass
class SegmentationResult:
    masks: dict          # camera_id -> (H, W) bool
    scores: dict         # camera_id -> (H, W) float (mean-normalized)
    config: SegmentationConfig
    anchors: np.ndarray
    iou: dict = field(default_factory=dict)  # camera_id -> float, if GT given


def iou(pred: np.ndarray, gt: np.ndarray) -> float:
    """Intersection over union of two binary masks; 1.0 when both are empty."""
    pred = np.asarray(pred).astype(bool)
    gt = np.asarray(gt).astype(bool)
    if pred.shape != gt.shape:
        raise ValidationError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    union = np.logical_or(pred, gt).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred, gt).sum() / union)


def init_g0(scene: GaussianScene, fg: ForegroundSpec, g0_threshold: float = 0.5,
            settings: RasterSettings = DEFAULT_SETTINGS):
    """Seed the diffusion vector by uplifting the foreground annotation.

    The uplifted mask is normalized by its mean over all nodes; entries below
    ``g0_threshold`` are zeroed. Nodes left positive form the anchor set.
    """
    ref_cam = scene.camera_by_id(fg.camera_id)
    gf, _ = uplift(scene, [(ref_cam, fg.mask)], settings)
    g = gf.values[:, 0].copy()
    mean = g.mean()
    if mean <= 0:
        raise ValidationError(
            "foreground mask reached no Gaussians; uplifted mask is empty"
        )
    g /= mean
    g[g < g0_threshold] = 0.0
    anchors = np.flatnonzero(g > 0)
    if anchors.size == 0:
        raise ValidationError(
            f"anchor set is empty at g0_threshold={g0_threshold}; "
            f"max normalized value is {g.max():.4g} - lower the threshold"
        )
    return g, anchors


def _apply_threshold(scores: np.ndarray, mode: str, value: float) -> np.ndarray:
    if scores.max() == scores.min():
        return scores > 0 if scores.max() > 0 else np.zeros_like(scores, dtype=bool)
    if mode == "fixed":
        thr = value
    elif mode == "li":
        thr = threshold_li(scores)
    else:
        thr = threshold_otsu(scores)
    return scores >= thr


def segment_by_diffusion(scene: GaussianScene, features: GaussianFeatures,
                         fg: ForegroundSpec, cfg: SegmentationConfig,
                         target_cams: list[Camera],
                         gt_masks: dict | None = None,
                         settings: RasterSettings = DEFAULT_SETTINGS) -> SegmentationResult:
    """Scribble/mask-seeded 3D segmentation rendered into the target views.

    Pipeline: uplift the annotation into g0 and anchors, build the feature
    graph whose unary factor is scored against the anchors, diffuse, render
    the final node weights into each view, mean-normalize, and threshold.
    """
    g0, anchors = init_g0(scene, fg, cfg.g0_threshold, settings)
    scorer = cfg.scorer
    if scorer == "auto":
        scorer = "logistic" if fg.kind == "reference_mask" else "cosine"
    unary_mode = "cosine_to_mean" if scorer == "cosine" else "logistic"
    params = replace(cfg.graph, unary_mode=unary_mode)
    centers = scene.means[scene.active_indices()]
    graph = build_graph(centers, features.values, params, anchors=anchors)
    state = diffuse(graph, g0, cfg.diffusion_steps, anchors=anchors)

    scores = {}
    for cam in target_cams:
        out = render(scene, cam, state.g, settings=settings)
        raw = out.channels[:, :, 0]
        mean = raw.mean()
        scores[cam.id] = raw / mean if mean > 0 else raw

    mode, value = cfg.threshold_mode, cfg.threshold_value
    if mode == "tuned":
        mode, value = "fixed", _tune_threshold(scores, target_cams, gt_masks)

    masks, ious = {}, {}
    for cam in target_cams:
        mask = _apply_threshold(scores[cam.id], mode, value)
        masks[cam.id] = mask
        if gt_masks is not None and cam.id in gt_masks:
            ious[cam.id] = iou(mask, gt_masks[cam.id])
    return SegmentationResult(
        masks=masks, scores=scores, config=cfg, anchors=anchors, iou=ious
    )


def _tune_threshold(scores: dict, target_cams, gt_masks: dict | None,
                    n_candidates: int = 64) -> float:
    """Threshold maximizing IoU on the first view with a reference mask."""
    ref_id = next(
        (c.id for c in target_cams if gt_masks is not None and c.id in gt_masks),
        None,
    )
    if ref_id is None:
        raise ValidationError(
            "threshold_mode 'tuned' needs a ground-truth mask for at least "
            "one target view"
        )
    ref_scores = scores[ref_id]
    gt = np.asarray(gt_masks[ref_id]).astype(bool)
    best_t, best_iou = 0.5, -1.0
    hi = ref_scores.max()
    if hi <= 0:
        return best_t
    for t in np.linspace(hi / n_candidates, hi, n_candidates):
        score = iou(ref_scores >= t, gt)
        if score > best_iou:
            best_t, best_iou = float(t), score
    return best_t


# ---------------------------------------------------------------------------
# Pixel-level foreground scorers on rendered feature maps
# ---------------------------------------------------------------------------

def score_foreground_cosine(rendered: FeatureMap, ref_features: np.ndarray,
                            bandwidth: float,
                            feature_scale: float | None = None) -> FeatureMap:
    """RBF similarity of each pixel's unit feature to the mean reference one.

    Zero-norm pixels (no coverage) score 0. The distance scale defaults to
    the median pairwise distance over a sample of the rendered features.
    """
    ref = unit_rows(np.atleast_2d(np.asarray(ref_features, dtype=np.float64)))
    if ref.shape[0] == 0:
        raise ValidationError("need at least one reference feature")
    mean_ref = ref.mean(axis=0)
    h, w, c = rendered.data.shape
    pix = rendered.data.reshape(-1, c)
    norms = np.linalg.norm(pix, axis=1)
    units = unit_rows(pix)
    if feature_scale is None:
        sample = units[norms > 0]
        if sample.shape[0] < 2:
            feature_scale = 1.0
        else:
            feature_scale = median_pairwise_distance(
                sample[:: max(1, sample.shape[0] // 2000)], 1_000_000
            )
        if feature_scale <= 0:
            feature_scale = 1.0
    sims = rbf_similarity(units, mean_ref[None, :], feature_scale, bandwidth)
    sims[norms == 0] = 0.0
    return FeatureMap(data=sims.reshape(h, w, 1), camera_id=rendered.camera_id)


def score_foreground_logistic(rendered_ref: FeatureMap, fg_pixels: np.ndarray,
                              rendered_target: FeatureMap) -> FeatureMap:
    """Foreground probability from a logistic model fit on the reference view.

    ``fg_pixels`` is a boolean (H, W) mask of positive pixels; all other
    reference pixels are negatives. Probabilities are predicted per target
    pixel.
    """
    fg_pixels = np.asarray(fg_pixels).astype(bool)
    h, w, c = rendered_ref.data.shape
    if fg_pixels.shape != (h, w):
        raise ValidationError(
            f"fg_pixels shape {fg_pixels.shape} != reference dims {(h, w)}"
        )
    labels = fg_pixels.reshape(-1)
    if labels.all() or not labels.any():
        raise ValidationError("foreground pixels must be a proper, non-empty subset")
    model = fit_logistic(rendered_ref.data.reshape(-1, c), labels)
    th, tw, tc = rendered_target.data.shape
    if tc != c:
        raise ValidationError(f"channel mismatch: reference {c}, target {tc}")
    probs = model(rendered_target.data.reshape(-1, c)).reshape(th, tw, 1)
    return FeatureMap(data=probs, camera_id=rendered_target.camera_id)


# ---------------------------------------------------------------------------
# Prompt generation for an external point-prompted mask predictor
# ---------------------------------------------------------------------------

def sample_prompt_sets(candidates_xy: np.ndarray, n_prompts: int,
                       n_repeats: int, rng_seed: int) -> list[np.ndarray]:
    """Draw ``n_repeats`` sets of ``n_prompts`` distinct candidate pixels.

    Reproducibility contract: draws come from numpy's Philox4x64-10 counter
    generator keyed by ``rng_seed``, via ``Generator.choice`` without
    replacement over the candidate list in row-major order.
    """
    candidates_xy = np.asarray(candidates_xy)
    if candidates_xy.shape[0] < n_prompts:
        raise ValidationError(
            f"only {candidates_xy.shape[0]} candidate pixels for "
            f"{n_prompts} prompts"
        )
    rng = np.random.Generator(np.random.Philox(key=rng_seed))
    sets = []
    for _ in range(n_repeats):
        pick = rng.choice(candidates_xy.shape[0], size=n_prompts, replace=False)
        sets.append(candidates_xy[pick])
    return sets


def generate_prompts(scene: GaussianScene, fg: ForegroundSpec, target_cam: Camera,
                     tau: float = 0.4, n_prompts: int = 3, n_repeats: int = 10,
                     rng_seed: int = 0,
                     settings: RasterSettings = DEFAULT_SETTINGS) -> list[np.ndarray]:
    """Point prompts for a target view, sampled from the reprojected mask.

    The annotation is reprojected into the target view, normalized by its
    average value, and pixels above ``tau`` become the candidate pool; each
    prompt set holds ``n_prompts`` (x, y) pixels drawn without replacement.
    """
    ref_cam = scene.camera_by_id(fg.camera_id)
    reproj = reproject_mask(scene, ref_cam, fg.mask, target_cam, settings)
    values = reproj.data[:, :, 0]
    mean = values.mean()
    norm = values / mean if mean > 0 else values
    ys, xs = np.nonzero(norm > tau)
    if xs.size == 0:
        raise ValidationError(
            f"no pixels above tau={tau}; max normalized value is {norm.max():.4g}"
        )
    candidates = np.stack([xs, ys], axis=1)
    return sample_prompt_sets(candidates, n_prompts, n_repeats, rng_seed)


def write_prompt_file(path, camera_id: str, points: np.ndarray,
                      repeat_index: int) -> None:
    payload = {
        "camera_id": camera_id,
        "points": [[int(x), int(y)] for x, y in points],
        "repeat_index": repeat_index,
    }
    Path(path).write_text(json.dumps(payload))


def run_external_predictor(prompt_sets: dict, workdir, predictor,
                           mask_format: str = "png") -> dict:
    """Exchange prompts and masks with an external point-prompted predictor.

    ``prompt_sets`` maps camera id to a list of prompt arrays. Prompt JSON
    files are written under ``workdir/prompts``; the predictor (a callable
    or a subprocess argv list invoked as ``argv + [prompts_dir, masks_dir]``)
    must write one grayscale mask per prompt file to ``workdir/masks`` with
    the same stem. Returns camera id -> list of FeatureMap masks.
    """
    workdir = Path(workdir)
    prompts_dir = workdir / "prompts"
    masks_dir = workdir / "masks"
    prompts_dir.mkdir(parents=True, exist_ok=True)
    masks_dir.mkdir(parents=True, exist_ok=True)
    for cam_id, sets in prompt_sets.items():
        for r, points in enumerate(sets):
            write_prompt_file(
                prompts_dir / f"{cam_id}_{r:03d}.json", cam_id, points, r
            )
    if callable(predictor):
        predictor(str(prompts_dir), str(masks_dir))
    else:
        subprocess.run(
            [*predictor, str(prompts_dir), str(masks_dir)], check=True
        )
    out: dict = {}
    for cam_id, sets in prompt_sets.items():
        masks = []
        for r in range(len(sets)):
            mask_path = masks_dir / f"{cam_id}_{r:03d}.{mask_format}"
            if not mask_path.exists():
                raise ValidationError(f"predictor wrote no mask {mask_path}")
            masks.append(read_mask(mask_path))
        out[cam_id] = masks
    return out


def mock_mask_predictor(gt_masks: dict, dilate_radius: int = 2):
    """Test stand-in for a point-prompted segmenter.

    For each prompt file it emits a binary dilation of the ground-truth mask
    of that camera when at least one prompt point hits the ground truth, and
    an empty mask otherwise.
    """
    structure = ndi.generate_binary_structure(2, 1)

    def predict(prompts_dir: str, masks_dir: str) -> None:
        for prompt_path in sorted(Path(prompts_dir).glob("*.json")):
            payload = json.loads(prompt_path.read_text())
            cam_id = payload["camera_id"]
            gt = np.asarray(gt_masks[cam_id]).astype(bool)
            hit = any(
                0 <= y < gt.shape[0] and 0 <= x < gt.shape[1] and gt[y, x]
                for x, y in payload["points"]
            )
            if hit:
                mask = ndi.binary_dilation(
                    gt, structure=structure, iterations=dilate_radius
                )
            else:
                mask = np.zeros_like(gt)
            write_mask(
                Path(masks_dir) / f"{prompt_path.stem}.png", mask.astype(float)
            )

    return predict


def average_external_masks(masks: list[FeatureMap], threshold_mode: str | None = None,
                           threshold_value: float = 0.5) -> FeatureMap:
    """Pixel-wise mean of predicted masks, optionally binarized."""
    if not masks:
        raise ValidationError("no masks to average")
    dims = masks[0].data.shape
    for m in masks[1:]:
        if m.data.shape != dims:
            raise ValidationError(
                f"mask dims differ: {m.data.shape} vs {dims}"
            )
    mean = np.mean([m.data for m in masks], axis=0)
    if threshold_mode is not None:
        binary = _apply_threshold(mean[:, :, 0], threshold_mode, threshold_value)
        mean = binary[:, :, None].astype(np.float64)
    return FeatureMap(data=mean, camera_id=masks[0].camera_id)


def config_from_dict(d: dict) -> SegmentationConfig:
    """SegmentationConfig from a plain dict (e.g. parsed JSON)."""
    d = dict(d)
    graph = GraphParams(**d.pop("graph", {}))
    return SegmentationConfig(graph=graph, **d)


def config_to_dict(cfg: SegmentationConfig) -> dict:
    from dataclasses import asdict

    return asdict(cfg)


def tune_hyperparameters(candidates: list[SegmentationConfig],
                         objective_mask: np.ndarray, pipeline) -> SegmentationConfig:
    """Exhaustively evaluate configs; return the IoU-argmax (ties: grid order).

    ``pipeline`` maps a config to a predicted binary mask comparable with
    ``objective_mask``.
    """
    if not candidates:
        raise ValidationError("empty hyperparameter grid")
    objective = np.asarray(objective_mask).astype(bool)
    best_cfg, best_iou = None, -1.0
    for cfg in candidates:
        score = iou(pipeline(cfg), objective)
        if score > best_iou:
            best_cfg, best_iou = cfg, score
    return best_cfg
