"""Command-line entry points.

Exit codes: 0 success, 1 validation/usage, 2 I/O or file format, 3 numeric.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import FormatError, NumericError, ValidationError
from . import feature_io
from .feature_io import (
    FeatureMap,
    pca_reduce,
    read_feature_container,
    read_mask,
    write_feature_container,
    write_mask,
)
from .graph import GraphParams, build_graph, diffuse
from .raster import render
from .scene import load_scene, save_cameras, save_scene
from .segmentation import (
    ForegroundSpec,
    config_from_dict,
    iou,
    segment_by_diffusion,
)
from .synthetic import (
    SyntheticSpec,
    benchmark_uplift,
    make_scribbles,
    make_two_cluster_scene,
    write_benchmark_report,
)
from .uplift import prune_by_importance, refine_by_gradient, uplift


def _load_scene_with_cameras(args):
    scene = load_scene(args.scene, args.cameras)
    if not scene.cameras:
        raise ValidationError("camera file contains no cameras")
    return scene


def _write_png(path, channels, alpha=None):
    from PIL import Image

    img = np.clip(channels, 0.0, 1.0)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[:, :, 0]
    arr = np.round(img * 255.0).astype(np.uint8)
    mode = "L" if arr.ndim == 2 else "RGB"
    Image.fromarray(arr, mode=mode).save(path)


def pca_color_features(values: np.ndarray) -> np.ndarray:
    """Map per-Gaussian features to RGB via their first three PCA components."""
    n, c = values.shape
    dim = min(3, c, n)
    _, projected = pca_reduce(values, dim)
    rgb = np.zeros((n, 3))
    rgb[:, :dim] = projected
    lo, hi = rgb.min(axis=0), rgb.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    return (rgb - lo) / span


def cmd_render(args) -> int:
    scene = _load_scene_with_cameras(args)
    cam = scene.camera_by_id(args.view)
    background = None
    if args.background:
        background = np.array([float(v) for v in args.background.split(",")])
    if args.layer == "rgb":
        out = render(scene, cam, background=background)
        _write_png(args.out, out.channels)
    elif args.layer == "alpha":
        out = render(scene, cam, np.zeros((scene.n_active, 1)))
        _write_png(args.out, out.alpha)
    else:  # pca
        if not args.features:
            raise ValidationError("--layer pca needs --features")
        values = read_feature_container(args.features)
        out = render(scene, cam, pca_color_features(values))
        _write_png(args.out, out.channels)
    return 0


def cmd_uplift(args) -> int:
    scene = _load_scene_with_cameras(args)
    frames = []
    for cam in scene.cameras:
        path = Path(args.features_dir) / f"{cam.id}.splf"
        if not path.exists():
            raise ValidationError(f"missing feature map for camera {cam.id}: {path}")
        frames.append((cam, feature_io.read_feature_map(path)))
    if args.count_normalize:
        from .uplift import uplift_count_normalized

        gf = uplift_count_normalized(scene, frames)
        beta = None
    else:
        gf, beta = uplift(scene, frames)
    if args.refine_steps > 0:
        gf = refine_by_gradient(scene, frames, gf, steps=args.refine_steps,
                                step_size=args.refine_step_size)
    values = gf.values
    if args.keep_fraction < 1.0:
        if beta is None:
            raise ValidationError("--keep-fraction needs weight normalization "
                                  "(drop --count-normalize)")
        pruned = prune_by_importance(scene, beta, args.keep_fraction)
        keep_local = np.flatnonzero(pruned.active_mask[scene.active_indices()])
        values = values[keep_local]
        if args.out_scene:
            save_scene(pruned, args.out_scene)
    write_feature_container(args.out, values.astype(np.float32))
    if args.out_beta and beta is not None:
        write_feature_container(args.out_beta, beta.astype(np.float32))
    return 0


def cmd_diffuse(args) -> int:
    scene = _load_scene_with_cameras(args) if args.cameras else load_scene(args.scene)
    features = read_feature_container(args.features)
    g0 = read_feature_container(args.g0)
    params = GraphParams(
        k=args.k, bandwidth_edge=args.bandwidth_edge,
        bandwidth_unary=args.bandwidth_unary, unary_mode=args.unary_mode,
        symmetrize=args.symmetrize,
    )
    centers = scene.means[scene.active_indices()]
    anchors = np.flatnonzero(g0.reshape(g0.shape[0], -1)[:, 0] > 0) \
        if params.unary_mode != "none" else None
    graph = build_graph(centers, features, params, anchors=anchors)
    if args.out_graph:
        adj = graph.adjacency
        write_feature_container(args.out_graph + ".offsets.splf",
                                adj.indptr.astype(np.float32))
        write_feature_container(args.out_graph + ".indices.splf",
                                adj.indices.astype(np.float32))
        write_feature_container(args.out_graph + ".values.splf",
                                adj.data.astype(np.float32))
    result = diffuse(graph, g0, args.steps)
    out = result.g if hasattr(result, "g") else result
    write_feature_container(args.out, np.asarray(out, dtype=np.float32))
    return 0


def cmd_segment(args) -> int:
    scene = _load_scene_with_cameras(args)
    features = read_feature_container(args.features)
    from .uplift import GaussianFeatures

    gf = GaussianFeatures(values=features)
    cfg = config_from_dict(json.loads(Path(args.config).read_text())) \
        if args.config else config_from_dict({})
    fg = ForegroundSpec(
        camera_id=args.fg_view, mask=read_mask(args.fg_mask), kind=args.fg_kind
    )
    if args.targets == "all":
        targets = scene.cameras
    else:
        targets = [scene.camera_by_id(t) for t in args.targets.split(",")]
    gt_masks = None
    if args.gt_dir:
        gt_masks = {}
        for cam in targets:
            p = Path(args.gt_dir) / f"{cam.id}.png"
            if p.exists():
                gt_masks[cam.id] = read_mask(p).data[:, :, 0] >= 0.5
    result = segment_by_diffusion(scene, gf, fg, cfg, targets, gt_masks=gt_masks)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for cam_id, mask in result.masks.items():
        write_mask(out_dir / f"{cam_id}.png", mask.astype(float))
        write_feature_container(out_dir / f"{cam_id}_scores.splf",
                                result.scores[cam_id].astype(np.float32))
    summary = {
        "anchors": int(result.anchors.size),
        "views": list(result.masks.keys()),
        "iou": result.iou,
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=1))
    if result.iou:
        print(json.dumps(summary["iou"]))
    return 0


def cmd_localize(args) -> int:
    from .openvocab import (
        localize,
        read_canonical_set,
        read_query_embedding,
        select_bandwidth,
    )

    scene = _load_scene_with_cameras(args)
    lang = read_feature_container(args.clip_features)
    guide = read_feature_container(args.dino_features)
    q = read_query_embedding(args.query_emb)
    canon = read_canonical_set(args.canon_emb)
    bandwidths = tuple(float(b) for b in args.bandwidths.split(","))
    cams = scene.cameras if args.views == "all" \
        else [scene.camera_by_id(v) for v in args.views.split(",")]
    rmap, best_b = select_bandwidth(
        scene, lang, guide, q, canon, cams, bandwidths=bandwidths,
        diffusion_steps=args.steps,
    )
    x, y = localize(rmap)
    payload = {
        "query": q.query_text,
        "camera_id": rmap.camera_id,
        "pixel": [x, y],
        "bandwidth": best_b,
        "peak_relevancy": float(rmap.scores.max()),
    }
    Path(args.out).write_text(json.dumps(payload, indent=1))
    if args.out_map:
        write_feature_container(args.out_map, rmap.scores.astype(np.float32))
    print(json.dumps(payload))
    return 0


def cmd_relevancy(args) -> int:
    from .openvocab import (
        read_canonical_set,
        read_query_embedding,
        refine_by_diffusion,
        relevancy_map,
    )

    scene = _load_scene_with_cameras(args)
    lang = read_feature_container(args.clip_features)
    q = read_query_embedding(args.query_emb)
    canon = read_canonical_set(args.canon_emb)
    if args.dino_features:
        guide = read_feature_container(args.dino_features)
        lang = refine_by_diffusion(
            scene, lang, guide,
            GraphParams(bandwidth_edge=args.bandwidth), steps=args.steps,
        )
    cams = scene.cameras if args.views == "all" \
        else [scene.camera_by_id(v) for v in args.views.split(",")]
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for cam in cams:
        out = render(scene, cam, lang)
        rmap = relevancy_map(FeatureMap(out.channels, camera_id=cam.id),
                             q, canon, kernel=args.kernel)
        write_feature_container(out_dir / f"{cam.id}.splf",
                                rmap.scores.astype(np.float32))
        _write_png(out_dir / f"{cam.id}.png", rmap.scores)
    return 0


def cmd_bench(args) -> int:
    spec = SyntheticSpec(
        n_gaussians=args.n_gaussians, n_views=args.views,
        width=args.width, height=args.height, seed=args.seed,
    )
    data = make_two_cluster_scene(spec)
    rng = np.random.Generator(np.random.Philox(key=args.seed))
    frames = [
        (cam, rng.normal(size=(cam.height, cam.width, args.channels)))
        for cam in data.scene.cameras
    ]
    report = benchmark_uplift(data.scene, frames, repeats=args.repeats)
    write_benchmark_report(args.out, report)
    print(json.dumps({
        "seconds_per_view_per_channel": report["seconds_per_view_per_channel"],
        "out": str(args.out),
    }))
    return 0


def cmd_gen_synthetic(args) -> int:
    spec = SyntheticSpec(
        n_gaussians=args.n_gaussians, n_views=args.views,
        width=args.width, height=args.height, noise=args.noise,
        opacity_range=(args.opacity_min, args.opacity_max), seed=args.seed,
    )
    data = make_two_cluster_scene(spec)
    out = Path(args.out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    (out / "gt_masks").mkdir(exist_ok=True)
    save_scene(data.scene, out / "scene.ply")
    save_cameras(data.scene.cameras, out / "cameras.json")
    for cam, fmap in data.feature_maps:
        feature_io.write_feature_map(out / "features" / f"{cam.id}.splf", fmap)
    for cam_id, mask in data.gt_masks.items():
        write_mask(out / "gt_masks" / f"{cam_id}.png", mask.astype(float))
    ref_id = data.scene.cameras[0].id
    scrib = make_scribbles(data.gt_masks[ref_id], seed=spec.seed,
                           n_points=4, radius=2)
    write_mask(out / "scribble.png", scrib)
    ys, xs = np.nonzero(scrib)
    (out / "scribble_points.json").write_text(json.dumps({
        "camera_id": ref_id,
        "points": [[int(x), int(y)] for x, y in zip(xs, ys)],
    }))
    # compute the bundled per-Gaussian features from the serialized artifacts
    # so re-running `uplift` on the bundle reproduces them bit-for-bit
    scene = load_scene(out / "scene.ply", out / "cameras.json")
    frames = [
        (cam, feature_io.read_feature_map(out / "features" / f"{cam.id}.splf"))
        for cam in scene.cameras
    ]
    gf, beta = uplift(scene, frames)
    write_feature_container(out / "gaussian_features.splf",
                            gf.values.astype(np.float32))
    meta = {
        "reference_view": ref_id,
        "n_gaussians": spec.n_gaussians,
        "n_views": spec.n_views,
        "width": spec.width,
        "height": spec.height,
        "noise": spec.noise,
        "seed": spec.seed,
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=1))
    print(json.dumps({"out_dir": str(out), **meta}))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    scene = _load_scene_with_cameras(args)
    features = read_feature_container(args.features) if args.features else None
    gt_masks = None
    if args.gt_dir:
        gt_masks = {}
        for cam in scene.cameras:
            p = Path(args.gt_dir) / f"{cam.id}.png"
            if p.exists():
                gt_masks[cam.id] = read_mask(p).data[:, :, 0] >= 0.5
    app = create_app(scene, features, gt_masks=gt_masks, ui_dir=args.ui_dir,
                     seed=args.seed)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(f"error: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="splift", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def add_scene_args(sp, cameras_required=True):
        sp.add_argument("--scene", required=True, help="scene PLY file")
        sp.add_argument("--cameras", required=cameras_required,
                        help="camera registry JSON")

    sp = sub.add_parser("render", help="render a view to PNG")
    add_scene_args(sp)
    sp.add_argument("--view", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--layer", choices=("rgb", "alpha", "pca"), default="rgb")
    sp.add_argument("--features", help="per-Gaussian features (for pca layer)")
    sp.add_argument("--background", help="RGB background, e.g. 1,1,1")
    sp.set_defaults(func=cmd_render)

    sp = sub.add_parser("uplift", help="aggregate 2D feature maps into 3D")
    add_scene_args(sp)
    sp.add_argument("--features-dir", required=True,
                    help="directory of <camera_id>.splf feature maps")
    sp.add_argument("--out", required=True, help="output features container")
    sp.add_argument("--keep-fraction", type=float, default=1.0,
                    help="prune to this fraction by importance (default: keep all)")
    sp.add_argument("--count-normalize", action="store_true",
                    help="normalize by hit count instead of blend weight")
    sp.add_argument("--refine-steps", type=int, default=0,
                    help="extra preconditioned gradient steps")
    sp.add_argument("--refine-step-size", type=float, default=1.0)
    sp.add_argument("--out-beta", help="also write per-Gaussian importance")
    sp.add_argument("--out-scene", help="write the pruned scene PLY")
    sp.set_defaults(func=cmd_uplift)

    sp = sub.add_parser("diffuse", help="graph diffusion of per-Gaussian values")
    sp.add_argument("--scene", required=True)
    sp.add_argument("--cameras")
    sp.add_argument("--features", required=True,
                    help="per-Gaussian features for graph edges (SPLF)")
    sp.add_argument("--g0", required=True, help="initial vector (SPLF)")
    sp.add_argument("--steps", type=int, default=100)
    sp.add_argument("--k", type=int, default=16)
    sp.add_argument("--bandwidth-edge", type=float, default=0.5)
    sp.add_argument("--bandwidth-unary", type=float, default=1.0)
    sp.add_argument("--unary-mode", default="none",
                    choices=("none", "cosine_to_mean", "logistic"))
    sp.add_argument("--symmetrize", action="store_true")
    sp.add_argument("--out", required=True)
    sp.add_argument("--out-graph", help="prefix for CSR dump (3 SPLF files)")
    sp.set_defaults(func=cmd_diffuse)

    sp = sub.add_parser("segment", help="scribble/mask-driven 3D segmentation")
    add_scene_args(sp)
    sp.add_argument("--features", required=True, help="per-Gaussian features")
    sp.add_argument("--fg-mask", required=True, help="annotation mask PNG/PGM")
    sp.add_argument("--fg-view", required=True, help="camera id of the annotation")
    sp.add_argument("--fg-kind", default="scribbles",
                    choices=("scribbles", "reference_mask"))
    sp.add_argument("--targets", default="all",
                    help="comma-separated camera ids or 'all'")
    sp.add_argument("--config", help="SegmentationConfig JSON file")
    sp.add_argument("--gt-dir", help="ground-truth masks for IoU reporting")
    sp.add_argument("--out-dir", required=True)
    sp.set_defaults(func=cmd_segment)

    sp = sub.add_parser("localize", help="open-vocabulary localization")
    add_scene_args(sp)
    sp.add_argument("--clip-features", required=True)
    sp.add_argument("--dino-features", required=True)
    sp.add_argument("--query-emb", required=True)
    sp.add_argument("--canon-emb", required=True)
    sp.add_argument("--bandwidths", default="0.0004,0.002,0.01,0.05")
    sp.add_argument("--steps", type=int, default=10)
    sp.add_argument("--views", default="all")
    sp.add_argument("--out", required=True)
    sp.add_argument("--out-map", help="write the winning relevancy map (SPLF)")
    sp.set_defaults(func=cmd_localize)

    sp = sub.add_parser("relevancy", help="per-view relevancy maps for a query")
    add_scene_args(sp)
    sp.add_argument("--clip-features", required=True)
    sp.add_argument("--dino-features",
                    help="guide features; enables diffusion refinement")
    sp.add_argument("--query-emb", required=True)
    sp.add_argument("--canon-emb", required=True)
    sp.add_argument("--bandwidth", type=float, default=0.01)
    sp.add_argument("--steps", type=int, default=10)
    sp.add_argument("--kernel", type=int, default=11)
    sp.add_argument("--views", default="all")
    sp.add_argument("--out-dir", required=True)
    sp.set_defaults(func=cmd_relevancy)

    sp = sub.add_parser("bench", help="uplift throughput benchmark")
    sp.add_argument("--n-gaussians", type=int, default=2000)
    sp.add_argument("--views", type=int, default=3)
    sp.add_argument("--width", type=int, default=640)
    sp.add_argument("--height", type=int, default=480)
    sp.add_argument("--channels", type=int, default=40)
    sp.add_argument("--repeats", type=int, default=5)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("gen-synthetic", help="write a synthetic scene bundle")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--n-gaussians", type=int, default=1000)
    sp.add_argument("--views", type=int, default=12)
    sp.add_argument("--width", type=int, default=128)
    sp.add_argument("--height", type=int, default=96)
    sp.add_argument("--noise", type=float, default=0.1)
    sp.add_argument("--opacity-min", type=float, default=0.9)
    sp.add_argument("--opacity-max", type=float, default=0.99)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_gen_synthetic)

    sp = sub.add_parser("serve", help="interactive scribble service")
    add_scene_args(sp)
    sp.add_argument("--features", help="per-Gaussian features (SPLF)")
    sp.add_argument("--gt-dir", help="optional GT masks for IoU display")
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=8321)
    sp.add_argument("--ui-dir", help="static frontend directory")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_serve)
    return p


def cli_dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as e:
        if isinstance(e.code, str):
            print(e.code, file=sys.stderr)
            return 1
        return 0 if e.code in (0, None) else 1
    except ValidationError as e:
        print(f"validation error: {e}", file=sys.stderr)
        return 1
    except (FormatError, OSError) as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(cli_dispatch())


if __name__ == "__main__":
    main()
