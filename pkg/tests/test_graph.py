import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from splift import (
    FeatureGraph,
    GraphParams,
    build_graph,
    diffuse,
    fit_logistic,
    knn_graph,
    rbf_similarity,
)
from splift.errors import ValidationError
from splift.graph import median_pairwise_distance, unit_rows


def brute_force_knn(centers, k):
    """O(n^2) neighbor oracle with (distance, index) ordering."""
    n = centers.shape[0]
    out = np.empty((n, k), dtype=np.int64)
    for i in range(n):
        d = np.linalg.norm(centers - centers[i], axis=1)
        order = sorted((dj, j) for j, dj in enumerate(d) if j != i)
        out[i] = [j for _, j in order[:k]]
    return out


def dense_adjacency(centers, features, params, anchors=None, scale=None):
    """Direct entrywise evaluation of the edge-weight definition."""
    feats = unit_rows(features)
    n = centers.shape[0]
    if scale is None:
        dists = [
            np.linalg.norm(feats[i] - feats[j])
            for i in range(n) for j in range(i + 1, n)
        ]
        scale = float(np.median(dists))
    neigh = brute_force_knn(centers, params.k)
    if params.unary_mode == "none":
        P = np.ones(n)
    elif params.unary_mode == "cosine_to_mean":
        mean = feats[np.asarray(anchors)].mean(axis=0)
        P = np.array([
            np.exp(-np.linalg.norm(feats[i] - mean) ** 2
                   / (params.bandwidth_unary * scale ** 2))
            for i in range(n)
        ])
    else:
        labels = np.zeros(n, dtype=bool)
        labels[np.asarray(anchors)] = True
        model = fit_logistic(feats, labels)
        P = model(feats) ** (1.0 / params.bandwidth_unary)
    A = np.zeros((n, n))
    for i in range(n):
        for j in neigh[i]:
            s = np.exp(-np.linalg.norm(feats[i] - feats[j]) ** 2
                       / (params.bandwidth_edge * scale ** 2))
            A[i, j] = s * np.sqrt(P[i]) * np.sqrt(P[j])
    return A, P


def random_graph(seed, n=30, k=5):
    rng = np.random.default_rng(seed)
    centers = rng.normal(size=(n, 3))
    features = rng.normal(size=(n, 6))
    params = GraphParams(k=k, bandwidth_edge=0.5)
    return build_graph(centers, features, params)


class TestKnn:
    def test_collinear_points(self):
        centers = np.array([[0.0, 0, 0], [1.0, 0, 0], [3.0, 0, 0]])
        neigh = knn_graph(centers, 1)
        assert neigh[:, 0].tolist() == [1, 0, 1]

    def test_duplicate_points_tie_by_lowest_index(self):
        centers = np.array([[0.0, 0, 0]] * 4 + [[5.0, 0, 0]])
        neigh = knn_graph(centers, 2)
        assert neigh[0].tolist() == [1, 2]
        assert neigh[3].tolist() == [0, 1]

    def test_matches_brute_force(self):
        rng = np.random.default_rng(17)
        centers = rng.normal(size=(200, 3))
        assert np.array_equal(knn_graph(centers, 8), brute_force_knn(centers, 8))

    def test_too_few_points(self):
        with pytest.raises(ValidationError):
            knn_graph(np.zeros((3, 3)), 3)


class TestRbf:
    def test_identical_features(self):
        f = np.array([0.6, 0.8])
        assert rbf_similarity(f, f, s_f=1.0, b=0.5) == pytest.approx(1.0)

    def test_unit_exponent(self):
        # squared distance equal to b * s^2 gives exp(-1)
        fi = np.array([1.0, 0.0])
        fj = np.array([0.0, 1.0])  # squared distance 2
        val = rbf_similarity(fi, fj, s_f=2.0, b=0.5)  # b s^2 = 2
        assert val == pytest.approx(np.exp(-1.0), abs=1e-12)

    def test_invalid_scale(self):
        with pytest.raises(ValidationError):
            rbf_similarity(np.ones(2), np.ones(2), s_f=0.0, b=1.0)

    def test_sampled_median_close_to_exact(self):
        rng = np.random.default_rng(3)
        feats = unit_rows(rng.normal(size=(100, 8)))
        exact = median_pairwise_distance(feats, sample_size=10**7)
        sampled = median_pairwise_distance(feats, sample_size=500, seed=5)
        assert abs(sampled - exact) / exact < 0.10

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_range(self, seed):
        rng = np.random.default_rng(seed)
        f = unit_rows(rng.normal(size=(2, 4)))
        v = rbf_similarity(f[0], f[1], s_f=1.3, b=0.7)
        assert 0.0 < v <= 1.0


class TestBuildGraph:
    def test_no_unary_gives_ones(self):
        rng = np.random.default_rng(0)
        centers = rng.normal(size=(20, 3))
        feats = rng.normal(size=(20, 4))
        graph = build_graph(centers, feats, GraphParams(k=3))
        assert_allclose(graph.unary, 1.0)
        assert graph.adjacency.nnz == 20 * 3

    def test_identical_features_all_anchors(self):
        rng = np.random.default_rng(1)
        centers = rng.normal(size=(10, 3))
        feats = np.tile([1.0, 2.0], (10, 1))
        params = GraphParams(k=2, unary_mode="cosine_to_mean")
        graph = build_graph(centers, feats, params, anchors=np.arange(10))
        assert_allclose(graph.unary, 1.0)
        assert_allclose(graph.adjacency.data, 1.0)

    @pytest.mark.parametrize("mode", ["none", "cosine_to_mean", "logistic"])
    def test_matches_dense_definition(self, mode):
        rng = np.random.default_rng(42)
        n = 50
        centers = np.concatenate([
            rng.normal(size=(25, 3)) - 2.0,
            rng.normal(size=(25, 3)) + 2.0,
        ])
        features = np.concatenate([
            rng.normal(size=(25, 4)) + np.array([3.0, 0, 0, 0]),
            rng.normal(size=(25, 4)) + np.array([0, 3.0, 0, 0]),
        ])
        anchors = np.arange(10)
        params = GraphParams(k=6, bandwidth_edge=0.7, bandwidth_unary=1.3,
                             unary_mode=mode)
        graph = build_graph(centers, features, params,
                            anchors=None if mode == "none" else anchors)
        expected, P = dense_adjacency(centers, features, params,
                                      anchors=anchors)
        assert_allclose(graph.adjacency.toarray(), expected, atol=1e-10)
        assert_allclose(graph.unary, P, atol=1e-10)

    def test_unary_without_anchors_rejected(self):
        rng = np.random.default_rng(0)
        params = GraphParams(k=2, unary_mode="cosine_to_mean")
        with pytest.raises(ValidationError, match="anchor"):
            build_graph(rng.normal(size=(10, 3)), rng.normal(size=(10, 2)),
                        params)

    def test_unary_bounds(self):
        rng = np.random.default_rng(9)
        centers = rng.normal(size=(40, 3))
        feats = rng.normal(size=(40, 5))
        for mode in ("cosine_to_mean", "logistic"):
            params = GraphParams(k=4, unary_mode=mode, bandwidth_unary=0.8)
            graph = build_graph(centers, feats, params, anchors=np.arange(5))
            assert np.all(graph.unary > 0.0)
            assert np.all(graph.unary <= 1.0)


class TestDiffuse:
    def test_zero_steps_identity(self):
        graph = random_graph(0)
        g0 = np.arange(30, dtype=float)
        state = diffuse(graph, g0, 0)
        assert_allclose(state.g, g0)

    def test_disconnected_component_stays_zero(self):
        # two far-apart blobs: kNN edges never cross
        rng = np.random.default_rng(4)
        centers = np.concatenate([
            rng.normal(size=(15, 3)),
            rng.normal(size=(15, 3)) + 100.0,
        ])
        feats = rng.normal(size=(30, 4))
        graph = build_graph(centers, feats, GraphParams(k=4, bandwidth_edge=1.0))
        g0 = np.zeros(30)
        g0[:15] = 1.0
        for steps in (1, 5, 50):
            state = diffuse(graph, g0, steps)
            assert_allclose(state.g[15:], 0.0)

    def test_converges_to_dominant_eigenvector(self):
        graph = random_graph(7)
        A = graph.adjacency.toarray()
        eigvals, eigvecs = np.linalg.eig(A)
        order = np.argsort(-np.abs(eigvals))
        lead = np.real(eigvecs[:, order[0]])
        gap = (np.abs(eigvals[order[0]]) - np.abs(eigvals[order[1]])) \
            / np.abs(eigvals[order[0]])
        assert gap > 0.1, "fixture graph must have a spectral gap"
        g0 = np.abs(np.random.default_rng(0).normal(size=30))

        def angle(v, w):
            cos = abs(v @ w) / (np.linalg.norm(v) * np.linalg.norm(w))
            return np.arccos(min(cos, 1.0))

        a10 = angle(diffuse(graph, g0, 10).g, lead)
        a100 = angle(diffuse(graph, g0, 100).g, lead)
        assert a100 <= a10 + 1e-12
        assert a100 < 1e-3

    def test_zero_input_warns(self):
        graph = random_graph(1)
        with pytest.warns(UserWarning, match="zero"):
            state = diffuse(graph, np.zeros(30), 5)
        assert_allclose(state.g, 0.0)

    def test_matrix_diffusion_matches_columns_under_column_norm(self):
        graph = random_graph(2)
        rng = np.random.default_rng(0)
        G0 = np.abs(rng.normal(size=(30, 3)))
        out = diffuse(graph, G0, 4, matrix_norm="column")
        for j in range(3):
            state = diffuse(graph, G0[:, j], 4)
            assert_allclose(out[:, j], state.g, atol=1e-12)

    def test_sparse_matches_dense_matvec(self):
        graph = random_graph(3)
        A = graph.adjacency.toarray()
        rng = np.random.default_rng(5)
        g = rng.normal(size=30)
        assert_allclose(graph.adjacency @ g, A @ g, atol=1e-10)

    @given(st.floats(0.1, 10.0), st.booleans())
    @settings(max_examples=20, deadline=None)
    def test_positive_homogeneity(self, c, negate):
        graph = random_graph(11)
        rng = np.random.default_rng(8)
        g0 = rng.normal(size=30)
        scale = -c if negate else c
        base = diffuse(graph, g0, 3).g
        scaled = diffuse(graph, scale * g0, 3).g
        # direction is preserved up to the sign of the scaling
        norm_b = np.linalg.norm(base)
        norm_s = np.linalg.norm(scaled)
        if norm_b > 1e-12 and norm_s > 1e-12:
            sign = -1.0 if negate else 1.0
            assert_allclose(scaled / norm_s, sign * base / norm_b, atol=1e-9)

    def test_nonnegativity_preserved(self):
        graph = random_graph(13)
        rng = np.random.default_rng(2)
        g0 = np.abs(rng.normal(size=30))
        state = diffuse(graph, g0, 20)
        assert np.all(state.g >= 0)


class TestFitLogistic:
    def test_separable_1d(self):
        X = np.concatenate([np.ones((40, 1)), -np.ones((40, 1))])
        y = np.zeros(80, dtype=bool)
        y[:40] = True
        model = fit_logistic(X, y)
        assert np.all(model(np.ones((1, 1))) > 0.9)
        assert np.all(model(-np.ones((1, 1))) < 0.1)

    def test_identical_features_give_balanced_prior(self):
        X = np.ones((60, 3))
        y = np.zeros(60, dtype=bool)
        y[:30] = True  # equal classes: prior is 0.5
        model = fit_logistic(X, y)
        assert_allclose(model(X), 0.5, atol=0.05)

    def test_single_class_rejected(self):
        X = np.random.default_rng(0).normal(size=(10, 2))
        with pytest.raises(ValidationError):
            fit_logistic(X, np.ones(10, dtype=bool))

    def test_accuracy_matches_convex_solver(self):
        from sklearn.linear_model import LogisticRegression

        rng = np.random.default_rng(12)
        n = 200
        X = np.concatenate([
            rng.normal(size=(n // 2, 2)) + np.array([1.5, 0.0]),
            rng.normal(size=(n // 2, 2)) - np.array([1.5, 0.0]),
        ])
        y = np.zeros(n, dtype=bool)
        y[:n // 2] = True
        model = fit_logistic(X, y)
        ours = (model(X) > 0.5) == y

        ref = LogisticRegression(C=1.0 / (n * 1e-4), class_weight="balanced")
        ref.fit(X, y)
        theirs = ref.predict(X) == y
        assert abs(ours.mean() - theirs.mean()) <= 0.02
