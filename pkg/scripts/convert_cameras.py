#!/usr/bin/env python3
"""Convert external camera formats to the repo's camera JSON.

Supported today: NeRF-style ``transforms.json`` (camera_angle_x +
camera-to-world matrices in the OpenGL convention). COLMAP text models are
sketched below but not wired up; see the field notes in ``convert_colmap``.
"""

import argparse
import json
from pathlib import Path

import numpy as np

from splift.scene import Camera, save_cameras

# flips OpenGL camera axes (y up, z backward) to x right / y down / z forward
_GL_TO_CV = np.diag([1.0, -1.0, -1.0])


def convert_nerf(transforms_path, width, height):
    blob = json.loads(Path(transforms_path).read_text())
    fx = 0.5 * width / np.tan(0.5 * float(blob["camera_angle_x"]))
    fy = blob.get("camera_angle_y")
    fy = 0.5 * height / np.tan(0.5 * float(fy)) if fy else fx
    cams = []
    for i, frame in enumerate(blob["frames"]):
        c2w = np.asarray(frame["transform_matrix"], dtype=np.float64)
        R_c2w = c2w[:3, :3] @ _GL_TO_CV
        t = c2w[:3, 3]
        w2c = np.eye(4)
        w2c[:3, :3] = R_c2w.T
        w2c[:3, 3] = -R_c2w.T @ t
        name = Path(frame.get("file_path", f"frame{i:04d}")).stem
        cams.append(Camera(
            id=name, width=width, height=height, fx=fx, fy=fy,
            cx=width / 2.0, cy=height / 2.0, world_to_camera=w2c,
        ))
    return cams


def convert_colmap(model_dir):
    # COLMAP text models split intrinsics (cameras.txt: CAMERA_ID MODEL W H
    # PARAMS...) from extrinsics (images.txt: IMAGE_ID QW QX QY QZ TX TY TZ
    # CAMERA_ID NAME), with the quaternion already world-to-camera. Wiring
    # this up needs per-model PARAMS handling (PINHOLE vs SIMPLE_RADIAL).
    raise NotImplementedError(
        "COLMAP conversion is not implemented; export your model to the "
        "NeRF transforms.json convention or write the camera JSON directly "
        "(see README, 'Camera registry')."
    )


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--format", choices=("nerf", "colmap"), required=True)
    ap.add_argument("--input", required=True,
                    help="transforms.json (nerf) or model dir (colmap)")
    ap.add_argument("--width", type=int, help="image width (nerf)")
    ap.add_argument("--height", type=int, help="image height (nerf)")
    ap.add_argument("--out", required=True, help="output camera JSON")
    args = ap.parse_args()

    if args.format == "nerf":
        if not args.width or not args.height:
            ap.error("--width/--height are required for nerf input")
        cams = convert_nerf(args.input, args.width, args.height)
    else:
        cams = convert_colmap(args.input)
    save_cameras(cams, args.out)
    print(f"wrote {len(cams)} cameras to {args.out}")


if __name__ == "__main__":
    main()
