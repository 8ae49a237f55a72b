#!/usr/bin/env python3
"""Open-vocabulary localization demo on the two-cluster scene.

Cluster A carries a "red mug"-aligned language embedding, cluster B a
distractor; the script sweeps diffusion bandwidths, picks the map with the
highest relevancy peak, and reports where the query localizes.
"""

import argparse

import numpy as np

from splift import (
    CanonicalSet,
    QueryEmbedding,
    SyntheticSpec,
    localize,
    make_two_cluster_scene,
    select_bandwidth,
    uplift,
)
from splift.openvocab import CANONICAL_TEXTS, mock_text_embedding


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--query", default="red mug")
    ap.add_argument("--dim", type=int, default=24)
    ap.add_argument("--noise", type=float, default=0.05)
    ap.add_argument("--seed", type=int, default=8)
    args = ap.parse_args()

    spec = SyntheticSpec(n_gaussians=600, n_views=6, width=96, height=72,
                         noise=args.noise, opacity_range=(0.9, 0.99),
                         seed=args.seed)
    data = make_two_cluster_scene(spec)
    guide, _ = uplift(data.scene, data.feature_maps)

    rng = np.random.default_rng(args.seed)
    target = mock_text_embedding(args.query, args.dim)
    distractor = mock_text_embedding("empty floor", args.dim)
    lang = np.where((data.labels == 0)[:, None], target, distractor)
    lang = lang + 0.05 * rng.normal(size=lang.shape)

    q = QueryEmbedding(args.query, target)
    canon = CanonicalSet(np.stack([
        mock_text_embedding(t, args.dim) for t in CANONICAL_TEXTS
    ]))
    rmap, best_b = select_bandwidth(
        data.scene, lang, guide.values, q, canon, data.scene.cameras,
    )
    x, y = localize(rmap)
    inside = data.gt_masks[rmap.camera_id][y, x]
    print(f"query {args.query!r}: bandwidth {best_b}, view {rmap.camera_id}, "
          f"pixel ({x}, {y}), peak relevancy {rmap.scores.max():.4f}")
    print(f"argmax inside the planted object footprint: {bool(inside)}")


if __name__ == "__main__":
    main()
