#!/usr/bin/env python3
"""Desk-scale reproduction: train a bank per PDE and tabulate PSNR/SSIM.

Drives the same pipeline as the acceptance suite but through the CLI
surfaces (gen-data, train, eval), so banks, sequences, metric CSVs, and
manifests land on disk under --workdir for inspection.
"""

import argparse
import json
import os

from bladepde.cli import main as cli

PDES = {
    "tv_flow": [],
    "perona_malik": ["--c", "10"],
    "ced": ["--alpha", "0.05", "--C-ced", "1.0", "--rho", "2.0"],
    "cahn_hilliard": ["--gamma", "1.0"],
}
SELECTION = {
    "cahn_hilliard": ["--orientation-bins", "8", "--strength-bins", "5",
                      "--coherence-bins", "1", "--intensity-bins", "6"],
}


def run(argv):
    rc = cli(argv)
    if rc != 0:
        raise SystemExit(f"command failed ({rc}): {' '.join(argv)}")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workdir", default="runs/reproduction")
    ap.add_argument("--corpus", default=None,
                    help="corpus root from gen_corpus.py (default: generate here)")
    ap.add_argument("--steps-hr", type=int, default=100)
    ap.add_argument("--iters", type=int, default=200)
    args = ap.parse_args()

    os.makedirs(args.workdir, exist_ok=True)
    corpus = args.corpus or os.path.join(args.workdir, "corpus")
    if not os.path.isdir(os.path.join(corpus, "train")):
        import subprocess
        import sys

        subprocess.run([sys.executable, os.path.join(os.path.dirname(__file__),
                                                     "gen_corpus.py"),
                        "--out", corpus], check=True)

    table = {}
    for pde, extra in PDES.items():
        wd = os.path.join(args.workdir, pde)
        print(f"== {pde}")
        for split in ("train", "held"):
            run(["gen-data", "--pde", pde, "--input-dir",
                 os.path.join(corpus, "train" if split == "train" else "held"),
                 "--scale", "4", "--dt-hr", "0.1", "--steps", str(args.steps_hr),
                 "--subsample-m", "10", "--out", os.path.join(wd, split)] + extra)
        bank = os.path.join(wd, "bank.bfb")
        run(["train", "--data", os.path.join(wd, "train"), "--unroll", "10",
             "--seed", "0", "--iters", str(args.iters), "--out", bank]
            + SELECTION.get(pde, []))
        peak = "1.0" if pde == "cahn_hilliard" else "255.0"
        scores = []
        held_dir = os.path.join(wd, "held")
        for seq in sorted(os.listdir(held_dir)):
            seq_dir = os.path.join(held_dir, seq)
            if not os.path.isdir(seq_dir):
                continue
            csv = os.path.join(wd, f"eval_{seq}.csv")
            run(["eval", "--reference-seq", seq_dir, "--bank", bank,
                 "--input", os.path.join(seq_dir, "frame_0000.png"),
                 "--peak", peak, "--out", csv])
            with open(csv + ".manifest.json") as f:
                scores.append(json.load(f)["metrics"])
        n = len(scores)
        table[pde] = {"psnr": sum(s["psnr"] for s in scores) / n,
                      "ssim": sum(s["ssim"] for s in scores) / n}

    print("\nAverage over held-out images (all frames):")
    print(f"{'PDE':<16}{'PSNR':>8}{'SSIM':>9}")
    for pde, row in table.items():
        print(f"{pde:<16}{row['psnr']:>8.2f}{row['ssim']:>9.4f}")
    with open(os.path.join(args.workdir, "summary.json"), "w") as f:
        json.dump(table, f, indent=2, sort_keys=True)


if __name__ == "__main__":
    main()
