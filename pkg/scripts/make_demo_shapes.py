"""Generate a small demo shape pair under demo_data/.

Writes a bumpy icosphere, a twisted near-isometric copy of it, and shared
farthest-point keypoints, ready for the sigma CLI:

    python3 scripts/make_demo_shapes.py --out demo_data --keypoints 8
    sigma match --shape-x demo_data/shape_x.off ...
"""

import argparse
from pathlib import Path

import numpy as np

from sigma import synthetic
from sigma.meshes import Shape, save_shape


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="demo_data")
    parser.add_argument("--keypoints", type=int, default=8)
    parser.add_argument("--subdivisions", type=int, default=2)
    parser.add_argument("--warp-rate", type=float, default=0.08)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)

    mesh_x = synthetic.bumpy_sphere(args.subdivisions, amplitude=0.15)
    mesh_y = synthetic.twist_warp(mesh_x, rate=args.warp_rate)
    mesh_y = synthetic.rigid_motion(
        mesh_y, synthetic.random_rotation(rng), rng.normal(size=3))
    keypoints = synthetic.fps_keypoints(mesh_x, args.keypoints)

    save_shape(Shape(mesh_x, keypoints), out / "shape_x.off",
               out / "keypoints_x.txt")
    save_shape(Shape(mesh_y, keypoints), out / "shape_y.off",
               out / "keypoints_y.txt")
    np.savetxt(out / "ground_truth.txt", np.arange(args.keypoints), fmt="%d")
    print(f"wrote {out}/shape_{{x,y}}.off with {args.keypoints} keypoints")


if __name__ == "__main__":
    main()
