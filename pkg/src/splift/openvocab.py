"""Open-vocabulary relevancy pipeline over uplifted language features.

Text-aligned per-Gaussian features (e.g. uplifted CLIP embeddings) are
refined by diffusion on a graph built from a second feature set, rendered
into 2D, and scored against a text query: each pixel's relevancy is the
worst-case pairwise softmax of the query dot product against four canonical
phrase embeddings. Relevancy maps drive localization (argmax pixel) and
prompt extraction for an external mask predictor.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import scipy.ndimage as ndi

from .errors import ValidationError
from .feature_io import (
    FeatureMap,
    PatchGrid,
    read_feature_container,
    sliding_window_aggregate,
    write_feature_container,
)
from .graph import GraphParams, build_graph, diffuse
from .raster import DEFAULT_SETTINGS, RasterSettings, render
from .scene import Camera, GaussianScene
from .segmentation import sample_prompt_sets

CANONICAL_TEXTS = ("object", "things", "stuff", "texture")
DEFAULT_BANDWIDTHS = (0.0004, 0.002, 0.01, 0.05)


def _check_unit(vec: np.ndarray, what: str) -> np.ndarray:
    vec = np.asarray(vec, dtype=np.float64).reshape(-1)
    norm = np.linalg.norm(vec)
    if abs(norm - 1.0) > 1e-5:
        raise ValidationError(f"{what} must be unit-norm, got |v| = {norm:.6g}")
    return vec


@dataclass
class QueryEmbedding:
    query_text: str
    vector: np.ndarray

    def __post_init__(self):
        self.vector = _check_unit(self.vector, f"query {self.query_text!r}")


@dataclass
class CanonicalSet:
    """Embeddings of the four canonical comparison phrases."""

    vectors: np.ndarray  # (4, c)
    texts: tuple = CANONICAL_TEXTS

    def __post_init__(self):
        vectors = np.asarray(self.vectors, dtype=np.float64)
        if vectors.shape[0] != 4:
            raise ValidationError(f"expected 4 canonical vectors, got {vectors.shape[0]}")
        self.vectors = np.stack([
            _check_unit(v, f"canonical {t!r}") for v, t in zip(vectors, self.texts)
        ])


@dataclass
class RelevancyMap:
    scores: np.ndarray  # (H, W) in (0, 1)
    query_id: str
    bandwidth: float | None = None
    camera_id: str = ""


def relevancy(feat: np.ndarray, q: QueryEmbedding, canon: CanonicalSet,
              temperature: float = 10.0) -> float:
    """Relevancy of a single feature vector against the query."""
    scores = relevancy_scores(
        np.asarray(feat, dtype=np.float64)[None, :], q, canon, temperature
    )
    return float(scores[0])


def relevancy_scores(feats: np.ndarray, q: QueryEmbedding, canon: CanonicalSet,
                     temperature: float = 10.0) -> np.ndarray:
    """Vectorized relevancy: min over canonicals of the pairwise softmax.

    For logits a = T f.q and b_i = T f.c_i the pairwise softmax
    exp(a)/(exp(a)+exp(b_i)) is evaluated as sigmoid(a - b_i), which is the
    overflow-free form of the ratio.
    """
    if temperature <= 0:
        raise ValidationError(f"temperature must be positive, got {temperature}")
    feats = np.asarray(feats, dtype=np.float64)
    dot_q = feats @ q.vector
    dot_c = feats @ canon.vectors.T  # (..., 4)
    margin = temperature * (dot_q[..., None] - dot_c)
    return (1.0 / (1.0 + np.exp(-margin))).min(axis=-1)


def box_mean_filter(field: np.ndarray, kernel: int) -> np.ndarray:
    """K x K mean filter with edge-clamped padding (K odd)."""
    if kernel % 2 == 0:
        raise ValidationError(f"kernel size must be odd, got {kernel}")
    return ndi.uniform_filter(np.asarray(field, dtype=np.float64),
                              size=kernel, mode="nearest")


def relevancy_map(rendered: FeatureMap, q: QueryEmbedding, canon: CanonicalSet,
                  temperature: float = 10.0, kernel: int = 11) -> RelevancyMap:
    """Per-pixel relevancy smoothed by a K x K mean filter (edge-clamped)."""
    h, w, c = rendered.data.shape
    raw = relevancy_scores(rendered.data.reshape(-1, c), q, canon, temperature)
    smoothed = box_mean_filter(raw.reshape(h, w), kernel)
    return RelevancyMap(
        scores=smoothed, query_id=q.query_text, camera_id=rendered.camera_id
    )


def pool_multiscale(grids_per_scale: list[list[PatchGrid]],
                    image_dims: tuple[int, int]) -> FeatureMap:
    """Average the sliding-window aggregates of several patch scales."""
    if not grids_per_scale:
        raise ValidationError("no scales given")
    maps = [sliding_window_aggregate(grids, image_dims) for grids in grids_per_scale]
    c = maps[0].channels
    for m in maps[1:]:
        if m.channels != c:
            raise ValidationError(
                f"channel mismatch across scales: {m.channels} vs {c}"
            )
    data = np.mean([m.data for m in maps], axis=0)
    return FeatureMap(data=data, camera_id=maps[0].camera_id)


def refine_by_diffusion(scene: GaussianScene, lang_features: np.ndarray,
                        guide_features: np.ndarray, params: GraphParams,
                        steps: int = 10) -> np.ndarray:
    """Diffuse language features on a graph built from guide features.

    The graph uses no unary factor; diffusion mixes language features among
    Gaussians whose guide features are similar, keeping each component's
    features inside the convex cone of its inputs.
    """
    centers = scene.means[scene.active_indices()]
    params = replace(params, unary_mode="none")
    graph = build_graph(centers, guide_features, params)
    lang = np.asarray(getattr(lang_features, "values", lang_features), dtype=np.float64)
    return diffuse(graph, lang, steps)


def select_bandwidth(scene: GaussianScene, lang_features, guide_features,
                     q: QueryEmbedding, canon: CanonicalSet, cams: list[Camera],
                     bandwidths=DEFAULT_BANDWIDTHS,
                     params: GraphParams | None = None,
                     diffusion_steps: int = 10, temperature: float = 10.0,
                     kernel: int = 11,
                     settings: RasterSettings = DEFAULT_SETTINGS):
    """Sweep edge bandwidths; keep the map with the highest relevancy peak.

    For each candidate bandwidth the language features are diffusion-refined,
    rendered into every view, and scored; the bandwidth whose best pixel
    relevancy is highest wins (ties by list order). Returns
    ``(best RelevancyMap, best bandwidth)``.
    """
    if not bandwidths:
        raise ValidationError("bandwidth candidate list is empty")
    if params is None:
        params = GraphParams()
    best_map, best_b, best_score = None, None, -np.inf
    for b in bandwidths:
        refined = refine_by_diffusion(
            scene, lang_features, guide_features,
            replace(params, bandwidth_edge=b), diffusion_steps,
        )
        for cam in cams:
            out = render(scene, cam, refined, settings=settings)
            rmap = relevancy_map(
                FeatureMap(data=out.channels, camera_id=cam.id),
                q, canon, temperature, kernel,
            )
            rmap.bandwidth = b
            peak = float(rmap.scores.max())
            if peak > best_score:
                best_map, best_b, best_score = rmap, b, peak
    return best_map, best_b


def localize(rmap: RelevancyMap) -> tuple[int, int]:
    """Highest-relevancy pixel as (x, y); ties resolve in row-major order."""
    flat = int(np.argmax(rmap.scores))
    y, x = np.unravel_index(flat, rmap.scores.shape)
    return int(x), int(y)


def top_q_prompts(rmap: RelevancyMap, rng_seed: int = 0, n_prompts: int = 3,
                  n_repeats: int = 10) -> list[np.ndarray]:
    """Prompt sets drawn from the top-q fraction of pixels by relevancy.

    The fraction is adaptive, q = 0.4 * mean(scores), so larger/brighter
    objects contribute more candidate prompts. Ties at the score cutoff
    resolve in row-major order.
    """
    scores = rmap.scores
    h, w = scores.shape
    q = 0.4 * float(scores.mean())
    m = int(np.ceil(q * h * w))
    if m < 1:
        raise ValidationError(f"empty candidate set (q={q:.4g})")
    order = np.argsort(-scores.reshape(-1), kind="stable")[:m]
    ys, xs = np.unravel_index(order, scores.shape)
    candidates = np.stack([xs, ys], axis=1)
    return sample_prompt_sets(candidates, n_prompts, n_repeats, rng_seed)


# ---------------------------------------------------------------------------
# Embedding files and the deterministic mock text embedder
# ---------------------------------------------------------------------------

def mock_text_embedding(text: str, dim: int, seed: int = 0) -> np.ndarray:
    """Deterministic unit vector keyed by the text's hash (test stand-in)."""
    digest = hashlib.sha256(f"{seed}:{text}".encode()).digest()
    key = int.from_bytes(digest[:16], "little")
    rng = np.random.Generator(np.random.Philox(key=key))
    v = rng.normal(size=dim)
    return v / np.linalg.norm(v)


def write_embedding(path, vector: np.ndarray, text: str) -> None:
    write_feature_container(path, np.asarray(vector, dtype=np.float32))
    Path(str(path) + ".json").write_text(json.dumps({"text": text}))


def read_query_embedding(path) -> QueryEmbedding:
    vector = read_feature_container(path)
    text = ""
    sidecar = Path(str(path) + ".json")
    if sidecar.exists():
        text = json.loads(sidecar.read_text()).get("text", "")
    return QueryEmbedding(query_text=text, vector=vector)


def read_canonical_set(path) -> CanonicalSet:
    vectors = read_feature_container(path)
    if vectors.ndim != 2 or vectors.shape[0] != 4:
        raise ValidationError(
            f"canonical embedding file must hold a 4 x c matrix, got {vectors.shape}"
        )
    texts = CANONICAL_TEXTS
    sidecar = Path(str(path) + ".json")
    if sidecar.exists():
        stored = json.loads(sidecar.read_text()).get("text", "")
        if isinstance(stored, (list, tuple)) and len(stored) == 4:
            texts = tuple(stored)
    return CanonicalSet(vectors=vectors, texts=texts)


def write_canonical_set(path, canon: CanonicalSet) -> None:
    write_feature_container(path, canon.vectors.astype(np.float32))
    Path(str(path) + ".json").write_text(json.dumps({"text": list(canon.texts)}))
