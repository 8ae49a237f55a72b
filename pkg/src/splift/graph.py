"""kNN feature-similarity graph over Gaussian centers and power diffusion.

Nodes are Gaussians; each node connects to its k nearest neighbors in 3D.
Edge weights combine an RBF similarity between (unit-normalized) node
features with an optional node-wise foreground-affinity factor P that keeps
diffusion from leaking outside the object of interest:

    A_ij = [j in N(i)] * S(f_i, f_j) * sqrt(P(f_i)) * sqrt(P(f_j))

Diffusion repeatedly applies A to an initial weight vector with an l2
renormalization before each multiply - a truncated power iteration pulling
the vector toward the dominant eigenspace of A.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .errors import ValidationError


@dataclass
class GraphParams:
    k: int = 16
    bandwidth_edge: float = 0.5
    bandwidth_unary: float = 1.0
    unary_mode: str = "none"  # none | cosine_to_mean | logistic
    median_sample_size: int = 1_000_000
    symmetrize: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValidationError(f"k must be >= 1, got {self.k}")
        if self.bandwidth_edge <= 0 or self.bandwidth_unary <= 0:
            raise ValidationError("bandwidths must be positive")
        if self.unary_mode not in ("none", "cosine_to_mean", "logistic"):
            raise ValidationError(f"unknown unary_mode {self.unary_mode!r}")


@dataclass
class FeatureGraph:
    adjacency: sp.csr_matrix  # (n, n), nonnegative, <= k nonzeros per row
    unary: np.ndarray         # (n,) node foreground affinity in (0, 1]
    feature_scale: float      # median pairwise feature distance used for edges

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]


@dataclass
class DiffusionState:
    g: np.ndarray
    step: int
    anchors: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))


def knn_graph(centers: np.ndarray, k: int) -> np.ndarray:
    """Exact k nearest neighbors (excluding self) per center; ties by index.

    Returns an (n, k) integer array; row i holds the neighbor ids of i in
    (distance, index) order. Uses a KD-tree with a brute-force fallback for
    rows whose distance ties cannot be resolved from the tree's candidates.
    """
    centers = np.asarray(centers, dtype=np.float64)
    n = centers.shape[0]
    if n <= k:
        raise ValidationError(f"need more points ({n}) than neighbors ({k})")
    tree = cKDTree(centers)
    extra = min(n, k + 9)  # headroom so boundary ties can be broken by index
    dist, idx = tree.query(centers, k=extra, workers=-1)
    neighbors = np.empty((n, k), dtype=np.int64)
    for i in range(n):
        d, j = dist[i], idx[i]
        keep = j != i
        d, j = d[keep], j[keep]
        order = np.lexsort((j, d))
        d, j = d[order], j[order]
        # candidates are trustworthy unless ties may extend past the window
        if extra < n and d[k - 1] == d[-1]:
            d = np.linalg.norm(centers - centers[i], axis=1)
            j = np.arange(n)
            keep = j != i
            d, j = d[keep], j[keep]
            order = np.lexsort((j, d))
            j = j[order]
            neighbors[i] = j[:k]
        else:
            neighbors[i] = j[:k]
    return neighbors


def median_pairwise_distance(features: np.ndarray, sample_size: int = 1_000_000,
                             seed: int = 0) -> float:
    """Median l2 distance over (a sample of) feature pairs.

    Exact over all n(n-1)/2 pairs when that count fits the sample budget;
    otherwise the exact median of a uniform random pair sample.
    """
    features = np.asarray(features, dtype=np.float64)
    n = features.shape[0]
    if n < 2:
        raise ValidationError("need at least 2 features")
    n_pairs = n * (n - 1) // 2
    if n_pairs <= sample_size:
        diffs = features[:, None, :] - features[None, :, :]
        d = np.sqrt((diffs ** 2).sum(axis=2))
        vals = d[np.triu_indices(n, k=1)]
    else:
        rng = np.random.Generator(np.random.Philox(key=seed))
        i = rng.integers(0, n, size=sample_size)
        j = rng.integers(0, n - 1, size=sample_size)
        j = np.where(j >= i, j + 1, j)  # distinct pair per draw
        vals = np.linalg.norm(features[i] - features[j], axis=1)
    return float(np.median(vals))


def rbf_similarity(fi: np.ndarray, fj: np.ndarray, s_f: float, b: float) -> np.ndarray:
    """exp(-||fi - fj||^2 / (b * s_f^2)); 1 for identical features."""
    if s_f <= 0:
        raise ValidationError(f"feature scale s_f must be positive, got {s_f}")
    if b <= 0:
        raise ValidationError(f"bandwidth must be positive, got {b}")
    fi = np.asarray(fi, dtype=np.float64)
    fj = np.asarray(fj, dtype=np.float64)
    sq = ((fi - fj) ** 2).sum(axis=-1)
    return np.exp(-sq / (b * s_f * s_f))


def unit_rows(features: np.ndarray) -> np.ndarray:
    """l2-normalize feature rows; zero rows stay zero."""
    features = np.asarray(features, dtype=np.float64)
    norms = np.linalg.norm(features, axis=-1, keepdims=True)
    return np.where(norms > 0, features / np.maximum(norms, 1e-300), 0.0)


def build_graph(centers: np.ndarray, features: np.ndarray, params: GraphParams,
                anchors: np.ndarray | None = None,
                feature_scale: float | None = None,
                blocked: np.ndarray | None = None) -> FeatureGraph:
    """Assemble the kNN adjacency with RBF edge weights and unary factors.

    Features are l2-normalized before similarity computation. ``anchors``
    (node ids of the object seed) are required for any unary mode other than
    "none": cosine_to_mean scores similarity to the mean anchor feature,
    logistic raises a trained foreground probability to the power 1/b.
    ``blocked`` nodes get their unary factor forced to zero, disconnecting
    them (the background-scribble affordance).
    """
    centers = np.asarray(centers, dtype=np.float64)
    feats = unit_rows(getattr(features, "values", features))
    n = centers.shape[0]
    if feats.shape[0] != n:
        raise ValidationError(
            f"feature rows {feats.shape[0]} != center count {n}"
        )
    neighbors = knn_graph(centers, params.k)
    if feature_scale is None:
        feature_scale = median_pairwise_distance(
            feats, params.median_sample_size, params.seed
        )
    if feature_scale <= 0:
        # identical features everywhere: similarities degenerate to 1
        feature_scale = 1.0

    if params.unary_mode == "none":
        unary = np.ones(n)
    else:
        if anchors is None or len(anchors) == 0:
            raise ValidationError(
                f"unary_mode {params.unary_mode!r} needs a non-empty anchor set"
            )
        anchors = np.asarray(anchors, dtype=np.int64)
        if params.unary_mode == "cosine_to_mean":
            mean_feat = feats[anchors].mean(axis=0)
            unary = rbf_similarity(
                feats, mean_feat[None, :], feature_scale, params.bandwidth_unary
            )
        else:  # logistic
            labels = np.zeros(n, dtype=bool)
            labels[anchors] = True
            model = fit_logistic(feats, labels)
            unary = model(feats) ** (1.0 / params.bandwidth_unary)
    unary = np.clip(unary, 0.0, 1.0)
    if blocked is not None and len(blocked):
        unary = unary.copy()
        unary[np.asarray(blocked, dtype=np.int64)] = 0.0

    rows = np.repeat(np.arange(n, dtype=np.int64), params.k)
    cols = neighbors.reshape(-1)
    sims = rbf_similarity(
        feats[rows], feats[cols], feature_scale, params.bandwidth_edge
    )
    vals = sims * np.sqrt(unary[rows]) * np.sqrt(unary[cols])
    adj = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    if params.symmetrize:
        adj = adj.maximum(adj.T).tocsr()
    return FeatureGraph(adjacency=adj, unary=unary, feature_scale=feature_scale)


def diffuse(graph: FeatureGraph, g0: np.ndarray, steps: int,
            anchors: np.ndarray | None = None,
            matrix_norm: str = "frobenius"):
    """Run ``steps`` diffusion iterations ``g <- A (g / ||g||)``.

    For vector input returns a DiffusionState carrying the final (raw,
    un-renormalized) vector. Matrix input diffuses all columns jointly,
    normalized per step by the Frobenius norm (or per column when
    ``matrix_norm="column"``), and returns the final matrix.
    """
    if steps < 0:
        raise ValidationError(f"steps must be >= 0, got {steps}")
    g0 = np.asarray(g0, dtype=np.float64)
    if not np.isfinite(g0).all():
        raise ValidationError("g0 contains non-finite values")
    is_vector = g0.ndim == 1
    g = g0.copy()
    if not np.any(g):
        warnings.warn("diffusion of an all-zero vector is undefined; returning zeros",
                      stacklevel=2)
        steps = 0
    A = graph.adjacency
    for _ in range(steps):
        if is_vector:
            norm = np.linalg.norm(g)
        elif matrix_norm == "column":
            norm = np.linalg.norm(g, axis=0, keepdims=True)
            norm = np.where(norm > 0, norm, 1.0)
        else:
            norm = np.linalg.norm(g)
        g = A @ (g / norm)
    if is_vector:
        anchors = anchors if anchors is not None else np.empty(0, dtype=np.int64)
        return DiffusionState(g=g, step=steps, anchors=np.asarray(anchors))
    return g


def fit_logistic(features: np.ndarray, positive, l2: float = 1e-4,
                 max_iter: int = 500, tol: float = 1e-6):
    """Binary logistic regression by gradient descent; returns a probability fn.

    Class-balanced weighting, l2 penalty on the weights (not the bias), and
    a Lipschitz step size; stops early when the gradient norm falls below
    ``tol``. ``positive`` is a boolean mask or an index set of positive rows.
    """
    X = np.asarray(features, dtype=np.float64)
    n, c = X.shape
    y = np.zeros(n, dtype=bool)
    y[np.asarray(positive)] = True
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("logistic fit needs both positive and negative rows")
    sample_w = np.where(y, n / (2.0 * n_pos), n / (2.0 * n_neg))
    t = np.where(y, 1.0, 0.0)

    w = np.zeros(c)
    b = 0.0
    # Lipschitz bound for the weighted logistic loss gradient
    lip = 0.25 * (sample_w[:, None] * X ** 2).sum() / n + l2
    lip += 0.25 * sample_w.sum() / n  # bias column
    step = 1.0 / max(lip, 1e-12)
    for _ in range(max_iter):
        z = X @ w + b
        p = 1.0 / (1.0 + np.exp(-z))
        err = sample_w * (p - t) / n
        grad_w = X.T @ err + l2 * w
        grad_b = err.sum()
        gnorm = np.sqrt((grad_w ** 2).sum() + grad_b ** 2)
        if gnorm < tol:
            break
        w -= step * grad_w
        b -= step * grad_b

    def predict(feats: np.ndarray) -> np.ndarray:
        feats = np.asarray(feats, dtype=np.float64)
        z = feats @ w + b
        return np.clip(1.0 / (1.0 + np.exp(-z)), 1e-12, 1.0 - 1e-12)

    predict.weights = w
    predict.bias = b
    return predict
