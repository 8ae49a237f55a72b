#!/usr/bin/env python3
"""Regenerate the frozen oracle-3g fixture under tests/data/oracle3g/.

The fixture is a tiny 3-Gaussian, 2-camera, 4x4 scene with random feature
maps; the golden per-Gaussian features are the uplift recomputed from the
*serialized* artifacts, so the CLI reproduces them bit-for-bit. Only rerun
this when the fixture layout itself changes - the point of the golden file
is to freeze behavior.
"""

from pathlib import Path

import numpy as np

from splift import load_scene, save_cameras, save_scene, uplift
from splift.feature_io import read_feature_map, write_feature_container, write_feature_map, FeatureMap
from splift.synthetic import make_oracle_scene

OUT = Path(__file__).resolve().parent.parent / "tests" / "data" / "oracle3g"


def main():
    (OUT / "features").mkdir(parents=True, exist_ok=True)
    scene = make_oracle_scene(seed=33, n_gaussians=3, n_views=2,
                              width=4, height=4)
    save_scene(scene, OUT / "scene.ply")
    save_cameras(scene.cameras, OUT / "cameras.json")
    rng = np.random.Generator(np.random.Philox(key=33))
    for cam in scene.cameras:
        data = rng.normal(size=(cam.height, cam.width, 2))
        write_feature_map(OUT / "features" / f"{cam.id}.splf",
                          FeatureMap(data=data, camera_id=cam.id))
    reloaded = load_scene(OUT / "scene.ply", OUT / "cameras.json")
    frames = [
        (cam, read_feature_map(OUT / "features" / f"{cam.id}.splf"))
        for cam in reloaded.cameras
    ]
    gf, beta = uplift(reloaded, frames)
    write_feature_container(OUT / "golden_features.splf",
                            gf.values.astype(np.float32))
    print(f"fixture written to {OUT} (beta: {np.round(beta, 4)})")


if __name__ == "__main__":
    main()
