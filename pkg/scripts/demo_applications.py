#!/usr/bin/env python3
"""Run the downstream demos with a trained bank directory from
reproduce_results.py: deconvolution, 4x upscaling, segmentation, and
two-hop resampling, writing images and metric lines.
"""

import argparse
import os

import numpy as np

from bladepde import apps, formats
from bladepde.grid import ImageGrid, convolve_replicate, mean_ssim, psnr
from bladepde.imgio import write_gray
from bladepde.synth import (
    add_noise,
    make_corpus,
    make_resampler_corpus,
    plate_image,
    synth_image,
    two_level_image,
)
from bladepde.train import TrainConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--banks", default="runs/reproduction",
                    help="workdir holding <pde>/bank.bfb files")
    ap.add_argument("--out", default="runs/demos")
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)
    ced = formats.read_filter_bank(os.path.join(args.banks, "ced", "bank.bfb"))
    tv = formats.read_filter_bank(os.path.join(args.banks, "tv_flow", "bank.bfb"))

    # deconvolution: sigma_blur 1, noise 5, lambda 2, ten steps
    truth = plate_image(1, 128)
    psf = apps.gaussian_psf(1.0, radius=2)
    observed = add_noise(ImageGrid(convolve_replicate(truth.data, psf)), 5.0, seed=1)
    dm = apps.DegradationModel(psf, 1, 2.0)
    restored = apps.deconv_restore(ced, observed, dm, steps=10, dt=0.4)
    print(f"deconv: PSNR {psnr(truth, observed):.2f} -> {psnr(truth, restored):.2f} dB, "
          f"SSIM {mean_ssim(truth, observed):.4f} -> {mean_ssim(truth, restored):.4f}")
    for name, img in (("deconv_truth", truth), ("deconv_observed", observed),
                      ("deconv_restored", restored)):
        write_gray(img, os.path.join(args.out, name + ".png"))

    # 4x upscaling with the TV regularizer: psf sigma 0.4 hi-res px, lambda 0.35
    hr = synth_image(31, 128)
    dm_up = apps.DegradationModel(apps.gaussian_psf(0.4), 4, 0.35)
    lowres = apps.apply_A(dm_up, hr)
    lanczos = apps.lanczos_upscale(lowres, 4)
    upscaled = apps.upscale(tv, lowres, dm_up, steps=10, dt=1.0)
    print(f"upscale 4x: lanczos {psnr(hr, lanczos):.2f} dB, "
          f"tv-regularized {psnr(hr, upscaled):.2f} dB")
    for name, img in (("upscale_lanczos", lanczos), ("upscale_tv", upscaled)):
        write_gray(img, os.path.join(args.out, name + ".png"))

    # segmentation: mu 0.04 with the learned curvature vs mu 0.2 reference
    f = two_level_image(64, 0.2, 0.8)
    blade_ls = apps.checkerboard_levelset(f.shape, mu=0.04)
    seg = apps.chan_vese_evolve(tv, f, blade_ls, 300, dt=0.5)
    ref = apps.chan_vese_evolve(
        apps.tv_curvature, f, apps.checkerboard_levelset(f.shape, mu=0.2), 300, dt=0.5)
    m1, m2 = seg.mask(), ref.mask()
    if m1.mean() > 0.5:
        m1 = ~m1
    if m2.mean() > 0.5:
        m2 = ~m2
    iou = np.logical_and(m1, m2).sum() / np.logical_or(m1, m2).sum()
    print(f"segmentation: c = {np.sort(np.r_[seg.c1, seg.c2])}, IoU vs reference {iou:.4f}")
    write_gray(ImageGrid(m1.astype(float)), os.path.join(args.out, "segment_mask.png"),
               scale=1.0)

    # two-hop resampling against bicubic on a noisy observation
    bx, by = apps.train_resampler(make_resampler_corpus(24, 256, seed0=3000), 0.5,
                                  TrainConfig(spatial_factor=8, ls_ridge=2e-4),
                                  noise_sigma=2.0)
    src = make_corpus(1, 256, seed0=9500)[0]
    obs = ImageGrid(convolve_replicate(src.data, apps.gaussian_psf(2.0))[::4, ::4])
    obs = add_noise(obs, 5.0, seed=5)
    fwd = apps.FlowField.constant(obs.shape, 0.25, 0.25)
    back = apps.FlowField.constant(obs.shape, -0.25, -0.25)
    two_hop = apps.resample(bx, by, apps.resample(bx, by, obs, fwd), back)
    bic = apps.bicubic_resample(apps.bicubic_resample(obs, fwd), back)
    crop = lambda g: ImageGrid(g.data[5:-5, 5:-5])
    print(f"resample round trip: learned {psnr(crop(obs), crop(two_hop)):.2f} dB, "
          f"bicubic {psnr(crop(obs), crop(bic)):.2f} dB")
    write_gray(two_hop, os.path.join(args.out, "resample_two_hop.png"))


if __name__ == "__main__":
    main()
