import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.stats import rankdata

from splift import (
    FeatureMap,
    ForegroundSpec,
    GraphParams,
    SegmentationConfig,
    average_external_masks,
    generate_prompts,
    init_g0,
    iou,
    render,
    reproject_mask,
    score_foreground_cosine,
    score_foreground_logistic,
    segment_by_diffusion,
    tune_hyperparameters,
    uplift,
)
from splift.errors import ValidationError
from splift.segmentation import (
    mock_mask_predictor,
    run_external_predictor,
    sample_prompt_sets,
)
from splift.synthetic import SyntheticSpec, make_scribbles, make_two_cluster_scene
import splift.graph


@pytest.fixture(scope="module")
def crisp_cluster_scene():
    """High-opacity two-cluster scene with sharp silhouettes."""
    spec = SyntheticSpec(
        n_gaussians=800, n_views=8, width=128, height=96, noise=0.08,
        opacity_range=(0.9, 0.99), seed=4,
    )
    data = make_two_cluster_scene(spec)
    gf, beta = uplift(data.scene, data.feature_maps)
    return data, gf


def _scribble_fg(data, seed=3):
    ref_cam = data.scene.cameras[0]
    scrib = make_scribbles(data.gt_masks[ref_cam.id], seed=seed, n_points=4,
                           radius=2)
    return ForegroundSpec(camera_id=ref_cam.id, mask=FeatureMap(scrib),
                          kind="scribbles")


def _region_map(rng, center, radius, dims=(48, 64), noise=0.08):
    """Synthetic two-feature map: a disc of one feature inside another."""
    h, w = dims
    yy, xx = np.mgrid[0:h, 0:w]
    cy, cx = center
    gt = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius ** 2
    v_fg, v_bg = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    raw = np.where(gt[:, :, None], v_fg, v_bg) + noise * rng.normal(size=(h, w, 2))
    return FeatureMap(raw), gt


class TestIoU:
    def test_identical(self):
        m = np.array([[1, 0], [1, 1]], dtype=bool)
        assert iou(m, m) == 1.0

    def test_disjoint(self):
        a = np.array([[1, 0]], dtype=bool)
        b = np.array([[0, 1]], dtype=bool)
        assert iou(a, b) == 0.0

    def test_half_overlap_squares(self):
        a = np.zeros((4, 4), dtype=bool)
        b = np.zeros((4, 4), dtype=bool)
        a[:, :2] = True   # 8 pixels
        b[:, 1:3] = True  # 8 pixels, overlap 4
        assert iou(a, b) == pytest.approx(1 / 3)

    def test_both_empty(self):
        z = np.zeros((3, 3), dtype=bool)
        assert iou(z, z) == 1.0

    def test_dim_mismatch(self):
        with pytest.raises(ValidationError):
            iou(np.zeros((2, 2), dtype=bool), np.zeros((3, 3), dtype=bool))


class TestInitG0:
    def test_uniform_uplift_keeps_all(self, crisp_cluster_scene):
        data, _ = crisp_cluster_scene
        scene = data.scene
        ref = scene.cameras[0]
        ones = FeatureMap(np.ones((ref.height, ref.width, 1)))
        fg = ForegroundSpec(camera_id=ref.id, mask=ones, kind="reference_mask")
        g0, anchors = init_g0(scene, fg, g0_threshold=0.5)
        covered = g0 > 0
        # every Gaussian visible from the reference view gets value ~1/mean
        _, beta = uplift(scene, [(ref, ones)])
        assert anchors.size == (beta > 0).sum()
        assert np.all(covered == (beta > 0))

    def test_anchor_subset_of_scribbled_cluster(self, crisp_cluster_scene):
        data, _ = crisp_cluster_scene
        fg = _scribble_fg(data)
        _, anchors = init_g0(data.scene, fg, g0_threshold=0.5)
        assert anchors.size > 0
        assert np.all(data.labels[anchors] == 0)

    def test_empty_anchor_set_suggests_lower_threshold(self, crisp_cluster_scene):
        data, _ = crisp_cluster_scene
        fg = _scribble_fg(data)
        with pytest.raises(ValidationError, match="lower"):
            init_g0(data.scene, fg, g0_threshold=1e9)

    def test_single_gaussian_mask_gives_singleton_anchor(self):
        from splift.scene import Camera, GaussianScene

        cam = Camera(id="c", width=1, height=1, fx=10, fy=10, cx=0.5, cy=0.5,
                     world_to_camera=np.eye(4))
        scene = GaussianScene(
            means=np.array([[0, 0, 1], [50, 0, 50]], dtype=np.float32),
            scales=np.array([[0.5] * 3, [0.001] * 3], dtype=np.float32),
            rotations=np.array([[1, 0, 0, 0]] * 2, dtype=np.float32),
            opacities=np.array([0.9, 0.9], dtype=np.float32),
            sh_coeffs=np.zeros((2, 1, 3), dtype=np.float32),
            cameras=[cam],
        )
        fg = ForegroundSpec(camera_id="c", mask=FeatureMap(np.ones((1, 1))),
                            kind="scribbles")
        g0, anchors = init_g0(scene, fg, g0_threshold=0.5)
        # only the first Gaussian is hit; mean-normalization makes its
        # value ~n, far above the threshold
        assert list(anchors) == [0]
        assert g0[0] > 1.0


class TestCosineScorer:
    def test_pixel_equal_to_mean_scores_one(self, rng):
        ref = np.tile([0.6, 0.8], (5, 1))
        fm = FeatureMap(np.tile([0.6, 0.8], (2, 2, 1)))
        out = score_foreground_cosine(fm, ref, bandwidth=0.7, feature_scale=1.0)
        assert_allclose(out.data, 1.0, atol=1e-12)

    def test_orthogonal_unit_features_formula(self):
        ref = np.array([[1.0, 0.0]])
        fm = FeatureMap(np.tile([0.0, 1.0], (1, 1, 1)))
        b, s = 0.8, 1.3
        out = score_foreground_cosine(fm, ref, bandwidth=b, feature_scale=s)
        assert out.data[0, 0, 0] == pytest.approx(np.exp(-2.0 / (b * s * s)),
                                                  abs=1e-12)

    def test_zero_norm_pixel_scores_zero(self):
        fm = FeatureMap(np.zeros((1, 2, 3)))
        out = score_foreground_cosine(fm, np.ones((1, 3)), bandwidth=1.0,
                                      feature_scale=1.0)
        assert_allclose(out.data, 0.0)

    def test_synthetic_cluster_separation_auc(self, rng):
        ref_map, ref_gt = _region_map(rng, (20, 24), 12)
        tgt_map, tgt_gt = _region_map(rng, (22, 40), 12)
        out = score_foreground_cosine(tgt_map, ref_map.data[ref_gt],
                                      bandwidth=0.5)
        s = out.data[:, :, 0]
        pos, neg = s[tgt_gt], s[~tgt_gt]
        ranks = rankdata(np.concatenate([pos, neg]))
        auc = (ranks[:pos.size].sum() - pos.size * (pos.size + 1) / 2) \
            / (pos.size * neg.size)
        assert auc > 0.99


class TestLogisticScorer:
    def test_target_equals_reference_separable(self, rng):
        ref_map, ref_gt = _region_map(rng, (20, 24), 12)
        out = score_foreground_logistic(ref_map, ref_gt, ref_map)
        assert out.data[:, :, 0][ref_gt].mean() > 0.5

    def test_identical_features_constant_probability(self):
        data = np.ones((10, 10, 2))
        fm = FeatureMap(data)
        fg = np.zeros((10, 10), dtype=bool)
        fg[:5] = True  # half the pixels positive
        out = score_foreground_logistic(fm, fg, fm)
        assert_allclose(out.data, 0.5, atol=0.05)

    def test_synthetic_scene_iou_after_li(self, rng):
        from splift.feature_io import threshold_li

        ref_map, ref_gt = _region_map(rng, (20, 24), 12)
        tgt_map, tgt_gt = _region_map(rng, (26, 40), 12)
        out = score_foreground_logistic(ref_map, ref_gt, tgt_map)
        v = out.data[:, :, 0]
        assert iou(v >= threshold_li(v), tgt_gt) > 0.95

    def test_degenerate_classes_rejected(self, rng):
        fm = FeatureMap(rng.normal(size=(4, 4, 2)))
        with pytest.raises(ValidationError):
            score_foreground_logistic(fm, np.ones((4, 4), dtype=bool), fm)


class TestSegmentByDiffusion:
    def test_component_confinement(self, crisp_cluster_scene):
        data, gf = crisp_cluster_scene
        scene = data.scene
        # the whole cluster A footprint as reference mask
        ref = scene.cameras[0]
        fg = ForegroundSpec(
            camera_id=ref.id,
            mask=FeatureMap(data.gt_masks[ref.id].astype(float)),
            kind="reference_mask",
        )
        cfg = SegmentationConfig(threshold_mode="otsu")
        res = segment_by_diffusion(scene, gf, fg, cfg, scene.cameras,
                                   gt_masks=data.gt_masks)
        # stray cluster-B Gaussians overlapping the footprint may slip in
        assert (data.labels[res.anchors] == 0).mean() > 0.98
        assert min(res.iou.values()) >= 0.95

    def test_exact_component_anchor_covers_footprint(self, crisp_cluster_scene):
        data, gf = crisp_cluster_scene
        scene = data.scene
        centers = scene.means[scene.active_indices()]
        graph = splift.graph.build_graph(
            centers, gf.values, GraphParams(unary_mode="none")
        )
        g0 = (data.labels == 0).astype(float)
        state = splift.graph.diffuse(graph, g0, 100)
        from splift.feature_io import threshold_otsu

        for cam in scene.cameras:
            out = render(scene, cam, state.g)
            v = out.channels[:, :, 0]
            v = v / v.mean()
            mask = v >= threshold_otsu(v)
            assert iou(mask, data.gt_masks[cam.id]) >= 0.95

    def test_scribble_input_beats_geometry_baseline(self, crisp_cluster_scene):
        data, gf = crisp_cluster_scene
        scene = data.scene
        fg = _scribble_fg(data)
        cfg = SegmentationConfig(threshold_mode="otsu")
        res = segment_by_diffusion(scene, gf, fg, cfg, scene.cameras,
                                   gt_masks=data.gt_masks)
        ref = scene.camera_by_id(fg.camera_id)
        for cam in scene.cameras:
            reproj = reproject_mask(scene, ref, fg.mask, cam).data[:, :, 0]
            mean = reproj.mean()
            base = reproj / mean if mean > 0 else reproj
            base_iou = iou(base >= 1.0, data.gt_masks[cam.id])
            assert res.iou[cam.id] >= base_iou

    def test_scribble_scale_invariance(self, crisp_cluster_scene):
        data, gf = crisp_cluster_scene
        scene = data.scene
        fg1 = _scribble_fg(data)
        fg2 = ForegroundSpec(camera_id=fg1.camera_id,
                             mask=FeatureMap(fg1.mask.data * 7.3),
                             kind="scribbles")
        cfg = SegmentationConfig(threshold_mode="otsu")
        r1 = segment_by_diffusion(scene, gf, fg1, cfg, scene.cameras[:2])
        r2 = segment_by_diffusion(scene, gf, fg2, cfg, scene.cameras[:2])
        for cam_id in r1.masks:
            assert np.array_equal(r1.masks[cam_id], r2.masks[cam_id])

    def test_t0_matches_reprojection_support(self, crisp_cluster_scene):
        import scipy.ndimage as ndi

        data, gf = crisp_cluster_scene
        scene = data.scene
        fg = _scribble_fg(data)
        cfg = SegmentationConfig(diffusion_steps=0, threshold_mode="otsu")
        res = segment_by_diffusion(scene, gf, fg, cfg, [scene.cameras[0]])
        mask = res.masks[scene.cameras[0].id]
        ref = scene.camera_by_id(fg.camera_id)
        reproj = reproject_mask(scene, ref, fg.mask, scene.cameras[0])
        support = ndi.binary_dilation(reproj.data[:, :, 0] > 1e-4,
                                      iterations=2)
        # with diffusion disabled the mask cannot spread beyond the
        # reprojected annotation
        assert mask.sum() > 0
        assert np.all(support[mask])

    def test_tuned_threshold_mode(self, crisp_cluster_scene):
        data, gf = crisp_cluster_scene
        scene = data.scene
        fg = _scribble_fg(data)
        cfg = SegmentationConfig(threshold_mode="tuned")
        res = segment_by_diffusion(scene, gf, fg, cfg, scene.cameras,
                                   gt_masks={fg.camera_id: data.gt_masks[fg.camera_id]})
        # threshold is tuned on the reference view and applied everywhere
        base = segment_by_diffusion(scene, gf, fg,
                                    SegmentationConfig(threshold_mode="otsu"),
                                    scene.cameras, gt_masks=data.gt_masks)
        tuned_iou = iou(res.masks[fg.camera_id], data.gt_masks[fg.camera_id])
        assert tuned_iou >= base.iou[fg.camera_id] - 1e-12

    def test_tuned_threshold_needs_gt(self, crisp_cluster_scene):
        data, gf = crisp_cluster_scene
        fg = _scribble_fg(data)
        cfg = SegmentationConfig(threshold_mode="tuned")
        with pytest.raises(ValidationError, match="tuned"):
            segment_by_diffusion(data.scene, gf, fg, cfg, data.scene.cameras)

    def test_leakage_without_unary(self):
        # one connected blob with identical features: nothing stops the
        # diffusion, so anchor mass spreads to (almost) every node
        spec = SyntheticSpec(
            n_gaussians=200, n_views=4, width=48, height=36, noise=0.0,
            cluster_separation=1.6, cluster_spread=0.4, seed=6,
        )
        data = make_two_cluster_scene(spec)
        scene = data.scene
        features = np.ones((scene.n_active, 4))  # similar features everywhere
        centers = scene.means[scene.active_indices()]
        graph = splift.graph.build_graph(
            centers, features, GraphParams(k=12, unary_mode="none")
        )
        g0 = np.zeros(scene.n_active)
        g0[:10] = 1.0
        state = splift.graph.diffuse(graph, g0, 100)
        connected = state.g > 0
        assert connected.mean() > 0.95


class TestPrompts:
    def test_defaults_and_membership(self, crisp_cluster_scene):
        data, _ = crisp_cluster_scene
        scene = data.scene
        fg = _scribble_fg(data)
        tgt = scene.cameras[2]
        sets = generate_prompts(scene, fg, tgt, tau=0.4, rng_seed=9)
        assert len(sets) == 10
        ref = scene.camera_by_id(fg.camera_id)
        reproj = reproject_mask(scene, ref, fg.mask, tgt).data[:, :, 0]
        norm = reproj / reproj.mean()
        for points in sets:
            assert points.shape == (3, 2)
            for x, y in points:
                assert norm[y, x] > 0.4

    def test_tau_one_variant(self, crisp_cluster_scene):
        data, _ = crisp_cluster_scene
        scene = data.scene
        fg = _scribble_fg(data)
        sets = generate_prompts(scene, fg, scene.cameras[1], tau=1.0,
                                rng_seed=3)
        assert len(sets) == 10

    def test_seed_reproducibility(self, crisp_cluster_scene):
        data, _ = crisp_cluster_scene
        scene = data.scene
        fg = _scribble_fg(data)
        a = generate_prompts(scene, fg, scene.cameras[2], rng_seed=77)
        b = generate_prompts(scene, fg, scene.cameras[2], rng_seed=77)
        for pa, pb in zip(a, b):
            assert np.array_equal(pa, pb)

    def test_empty_candidates_report_max(self, crisp_cluster_scene):
        data, _ = crisp_cluster_scene
        scene = data.scene
        fg = _scribble_fg(data)
        with pytest.raises(ValidationError, match="max normalized"):
            generate_prompts(scene, fg, scene.cameras[2], tau=1e9)

    def test_sample_without_replacement(self):
        cands = np.array([[0, 0], [1, 0], [2, 0]])
        sets = sample_prompt_sets(cands, n_prompts=3, n_repeats=5, rng_seed=0)
        for s in sets:
            assert len({tuple(p) for p in s}) == 3


class TestExternalMasks:
    def test_identical_masks_average_to_same(self, rng):
        m = FeatureMap((rng.random((8, 8)) > 0.5).astype(float))
        out = average_external_masks([m] * 10)
        assert_allclose(out.data, m.data)

    def test_mean_of_disagreeing_masks(self):
        a = FeatureMap(np.ones((2, 2)))
        b = FeatureMap(np.zeros((2, 2)))
        out = average_external_masks([a] * 5 + [b] * 5)
        assert_allclose(out.data, 0.5)

    def test_dim_mismatch(self):
        with pytest.raises(ValidationError):
            average_external_masks(
                [FeatureMap(np.ones((2, 2))), FeatureMap(np.ones((3, 2)))]
            )

    def test_averaging_denoises(self, rng):
        clean = np.zeros((40, 40), dtype=bool)
        clean[10:30, 12:32] = True
        noisy = []
        for _ in range(10):
            flip = rng.random(clean.shape) > 0.9
            noisy.append(FeatureMap((clean ^ flip).astype(float)))
        single_iou = iou(noisy[0].data[:, :, 0] >= 0.5, clean)
        fused = average_external_masks(noisy, threshold_mode="fixed",
                                       threshold_value=0.5)
        fused_iou = iou(fused.data[:, :, 0] >= 0.5, clean)
        assert fused_iou > single_iou

    def test_mock_predictor_protocol(self, tmp_path, crisp_cluster_scene):
        data, _ = crisp_cluster_scene
        scene = data.scene
        fg = _scribble_fg(data)
        tgt = scene.cameras[1]
        sets = generate_prompts(scene, fg, tgt, rng_seed=5)
        predictor = mock_mask_predictor(data.gt_masks, dilate_radius=1)
        masks = run_external_predictor({tgt.id: sets}, tmp_path, predictor)
        assert len(masks[tgt.id]) == 10
        fused = average_external_masks(masks[tgt.id], threshold_mode="li")
        assert iou(fused.data[:, :, 0] > 0, data.gt_masks[tgt.id]) > 0.5


class TestTuneHyperparameters:
    def test_grid_of_one(self):
        cfg = SegmentationConfig()
        out = tune_hyperparameters([cfg], np.ones((2, 2), dtype=bool),
                                   lambda c: np.ones((2, 2), dtype=bool))
        assert out is cfg

    def test_fixed_point_selected(self):
        target = np.zeros((4, 4), dtype=bool)
        target[1:3, 1:3] = True

        def pipeline(cfg):
            if cfg.threshold_value == 0.5:
                return target
            return np.zeros((4, 4), dtype=bool)

        grid = [
            SegmentationConfig(threshold_mode="fixed", threshold_value=v)
            for v in (0.1, 0.5, 0.9)
        ]
        best = tune_hyperparameters(grid, target, pipeline)
        assert best.threshold_value == 0.5

    def test_bandwidth_grid_attains_max(self, crisp_cluster_scene):
        data, gf = crisp_cluster_scene
        scene = data.scene
        fg = _scribble_fg(data)
        ref_id = fg.camera_id
        gt = data.gt_masks[ref_id]
        grid = [
            SegmentationConfig(
                graph=GraphParams(bandwidth_edge=b), threshold_mode="otsu"
            )
            for b in (0.05, 0.5, 2.0)
        ]
        measured = []

        def pipeline(cfg):
            res = segment_by_diffusion(
                scene, gf, fg, cfg, [scene.camera_by_id(ref_id)]
            )
            return res.masks[ref_id]

        for cfg in grid:
            measured.append(iou(pipeline(cfg), gt))
        best = tune_hyperparameters(grid, gt, pipeline)
        assert iou(pipeline(best), gt) == pytest.approx(max(measured))

    def test_empty_grid(self):
        with pytest.raises(ValidationError):
            tune_hyperparameters([], np.ones((2, 2), dtype=bool), lambda c: c)
