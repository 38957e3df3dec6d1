"""Paint one synthetic scene's answers as images, read them back, and score them.

Every dense task in this package speaks RGB: a depth map becomes gray levels,
class labels become palette colors, keypoints become a heatmap plus colored
squares, and instances are colored by where their center sits. This script
walks one scene through all four codecs and writes a strip of the encodings.

    python3 demos/codec_tour.py --out codec_tour.png
"""
import argparse

import numpy as np

from painter.codecs import (decode_depth, decode_instances, decode_keypoints, decode_semseg,
                            encode_depth, encode_instances, encode_keypoints, encode_semseg)
from painter.image import save_image
from painter.metrics import depth_metrics, miou
from painter.synth import SceneSpec, gen_scene, scene_tables


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=4)
    ap.add_argument("--out", default="codec_tour.png")
    args = ap.parse_args()

    spec = SceneSpec(size=96, shape_count=(2, 4), extent=(20, 40))
    scene = gen_scene(spec, np.random.default_rng(args.seed))
    h, w = scene.labels.shape
    table = scene_tables(spec.num_classes)

    depth_img = encode_depth(scene.depth)
    back = decode_depth(depth_img)
    rmse = depth_metrics(back, scene.depth)["rmse"]
    print(f"depth     : 8-bit gray, roundtrip RMSE {rmse:.4f} m")

    sem_img = encode_semseg(scene.labels, table)
    labels, _ = decode_semseg(sem_img, table)
    print(f"semseg    : base-{table.base} palette, roundtrip mIoU "
          f"{miou(labels, scene.labels, spec.num_classes)[0]:.3f}")

    # The keypoint decoder reads one person per image (boxes come from a
    # detector in the top-down setting), so use a scene with a single figure.
    person = gen_scene(SceneSpec(size=96, shape_count=(1, 1), kinds=("stick",), extent=(20, 40)),
                       np.random.default_rng(args.seed))
    kp_img = encode_keypoints(person.keypoints, h, w)
    got = {k.cls: (k.x, k.y) for k in decode_keypoints(kp_img)}
    worst = max((abs(got[k.cls][0] - k.x) + abs(got[k.cls][1] - k.y)
                 for k in person.keypoints if k.cls in got), default=0.0)
    print(f"keypoints : {len(person.keypoints)} joints painted, {len(got)} read back, "
          f"worst L1 offset {worst:.2f} px (overlapping joints hide each other)")

    inst_img = encode_instances(scene.instances, h, w)
    decoded = decode_instances(inst_img)
    ious = []
    for inst in scene.instances:
        best = max((np.logical_and(inst.mask, d.mask).sum() / np.logical_or(inst.mask, d.mask).sum()
                    for d in decoded), default=0.0)
        ious.append(best)
    print(f"instances : {len(scene.instances)} masks, {len(decoded)} decoded, "
          f"min IoU {min(ious, default=1.0):.3f}")

    strip = np.concatenate([scene.image, depth_img, sem_img, inst_img, person.image, kp_img], axis=1)
    save_image(strip, args.out)
    print(f"wrote {args.out} (input | depth | semseg | instances | figure | keypoints)")


if __name__ == "__main__":
    main()
