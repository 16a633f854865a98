#!/usr/bin/env python3
"""Write the synthetic image corpora to disk as 8-bit PNGs.

Produces three directories under --out: train/ (natural-like scenes),
held/ (disjoint seeds, plays the evaluation-suite role), and texture/
(oriented gratings that complete the resampler training mix).
"""

import argparse
import os

from bladepde.imgio import write_gray
from bladepde.synth import grating_image, make_corpus


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="corpus")
    ap.add_argument("--train", type=int, default=24)
    ap.add_argument("--held", type=int, default=8)
    ap.add_argument("--texture", type=int, default=12)
    ap.add_argument("--size", type=int, default=256)
    args = ap.parse_args()

    groups = {
        "train": make_corpus(args.train, args.size, seed0=1000),
        "held": make_corpus(args.held, args.size, seed0=9000),
        "texture": [grating_image(8000 + i, args.size) for i in range(args.texture)],
    }
    for name, images in groups.items():
        d = os.path.join(args.out, name)
        os.makedirs(d, exist_ok=True)
        for i, img in enumerate(images):
            write_gray(img, os.path.join(d, f"{name}_{i:03d}.png"), bits=8)
        print(f"{d}: {len(images)} images")


if __name__ == "__main__":
    main()
