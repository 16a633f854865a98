"""Command-line interface: dataset generation, training, evolution, evaluation,
and the downstream applications.

Exit codes: 0 success, 1 instability/divergence, 2 usage or IO errors. Every
command that writes images also writes a JSON manifest recording the command,
effective parameters, seeds, input hashes, output paths, and metric results,
so runs are auditable and reproducible.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import apps, formats, imgio, train as train_mod
from .features import SelectionConfig, calibrate_thresholds
from .grid import FrameSequence, ImageGrid, InstabilityError, mean_ssim, psnr
from .integrate import SequenceModel, evolve
from .net import FilterBank, Footprint
from .refsolve import PDE_NAMES, SchemeConfig

IMAGE_EXTS = (".png", ".pgm", ".ppm")


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    if os.path.isdir(path):
        # directory digest: file names and contents in sorted order
        for base, dirs, files in sorted(os.walk(path)):
            dirs.sort()
            for name in sorted(files):
                h.update(name.encode())
                with open(os.path.join(base, name), "rb") as f:
                    h.update(f.read())
        return h.hexdigest()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(path: str, command: str, params: dict, inputs: list,
                    outputs: list, metrics: dict | None = None) -> None:
    manifest = {
        "command": command,
        "parameters": params,
        "inputs": {p: _sha256(p) for p in inputs},
        "outputs": sorted(outputs),
        "metrics": metrics or {},
    }
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def _list_images(d: str) -> list:
    if not os.path.isdir(d):
        raise OSError(f"input directory not found: {d}")
    names = sorted(n for n in os.listdir(d) if n.lower().endswith(IMAGE_EXTS))
    if not names:
        raise OSError(f"no images found in {d}")
    return [os.path.join(d, n) for n in names]


def _scheme_config(args) -> SchemeConfig:
    return SchemeConfig(pde=args.pde, dt=args.dt_hr, dx=args.dx, c=args.c,
                        alpha=args.alpha, C_ced=args.C_ced, rho=args.rho,
                        gamma=args.gamma, epsilon_reg=args.epsilon_reg)


def _add_scheme_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dx", type=float, default=1.0)
    p.add_argument("--c", type=float, default=10.0, help="Perona-Malik contrast")
    p.add_argument("--alpha", type=float, default=0.05, help="CED base diffusivity")
    p.add_argument("--C-ced", dest="C_ced", type=float, default=1.0)
    p.add_argument("--rho", type=float, default=2.0, help="CED tensor smoothing")
    p.add_argument("--gamma", type=float, default=1.0, help="Cahn-Hilliard parameter")
    p.add_argument("--epsilon-reg", type=float, default=1e-4)


def _intensity_scale(args) -> float:
    if args.intensity_scale is not None:
        return args.intensity_scale
    return 1.0 if getattr(args, "pde", None) == "cahn_hilliard" else 255.0


def cmd_gen_data(args) -> int:
    paths = _list_images(args.input_dir)
    cfg = _scheme_config(args)
    tc = train_mod.TrainConfig(spatial_factor=args.scale, temporal_factor=args.subsample_m)
    scale = _intensity_scale(args)
    os.makedirs(args.out, exist_ok=True)
    outputs = []
    for p in paths:
        stem = os.path.splitext(os.path.basename(p))[0]
        u0 = imgio.read_gray(p, scale=scale)
        seq = train_mod.make_target_sequence(u0, cfg, tc, args.steps)
        outdir = os.path.join(args.out, stem)
        imgio.write_sequence(seq, outdir, bits=args.bits, scale=scale, metadata={
            "pde": args.pde, "dt_hr": args.dt_hr, "subsample_m": args.subsample_m,
            "spatial_factor": args.scale, "steps_hr": args.steps,
            "parameters": {"c": cfg.c, "alpha": cfg.alpha, "C_ced": cfg.C_ced,
                           "rho": cfg.rho, "gamma": cfg.gamma,
                           "epsilon_reg": cfg.epsilon_reg, "dx": cfg.dx},
            "source": os.path.basename(p),
        })
        outputs.append(outdir)
    _write_manifest(os.path.join(args.out, "manifest.json"), "gen-data",
                    {k: v for k, v in vars(args).items() if k != "func"},
                    paths, outputs)
    return 0


def _selection_from_flags(args) -> SelectionConfig:
    return SelectionConfig(
        orientation_bins=args.orientation_bins,
        strength_thresholds=(0.0,) * (args.strength_bins - 1),
        coherence_thresholds=(0.0,) * (args.coherence_bins - 1),
        intensity_thresholds=(0.0,) * (args.intensity_bins - 1) if args.intensity_bins else None,
        rho=args.selection_rho,
    )


def _add_selection_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--orientation-bins", type=int, default=24)
    p.add_argument("--strength-bins", type=int, default=3)
    p.add_argument("--coherence-bins", type=int, default=3)
    p.add_argument("--intensity-bins", type=int, default=0,
                   help="0 disables the intensity feature")
    p.add_argument("--selection-rho", type=float, default=1.0)


def _sequence_dirs(data: str) -> list:
    """Sequence directories from a dataset root or a JSON manifest listing them."""
    if os.path.isfile(data):
        with open(data) as f:
            listed = json.load(f)
        if not isinstance(listed, list):
            raise ValueError(f"{data}: dataset manifest must be a JSON list")
        base = os.path.dirname(os.path.abspath(data))
        return [d if os.path.isabs(d) else os.path.join(base, d) for d in listed]
    if not os.path.isdir(data):
        raise OSError(f"data directory not found: {data}")
    return [os.path.join(data, d) for d in sorted(os.listdir(data))
            if os.path.isdir(os.path.join(data, d))]


def _load_dataset(data: str, unroll: int):
    windows = []
    frames_for_calibration = []
    for seq_dir in _sequence_dirs(data):
        if not os.path.exists(os.path.join(seq_dir, "sequence.json")):
            continue
        seq, _meta = imgio.read_sequence(seq_dir)
        windows.extend(train_mod.windows_from_sequence(seq, unroll))
        frames_for_calibration.extend(seq.frames)
    if not windows:
        raise OSError(f"no usable sequences under {data}")
    return windows, frames_for_calibration


def cmd_train(args) -> int:
    windows, frames = _load_dataset(args.data, args.unroll)
    selection = calibrate_thresholds(frames, _selection_from_flags(args))
    init = FilterBank.zeros(selection, Footprint(args.footprint, args.footprint))
    cfg = train_mod.TrainConfig(
        unroll_steps=args.unroll, lr=args.lr, iterations=args.iters,
        batch_size=args.batch, seed=args.seed, ls_init=args.ls_init)
    bank, losses = train_mod.train(windows, cfg, init)
    formats.write_filter_bank(args.out, bank)
    loss_csv = args.out + ".loss.csv"
    train_mod.save_loss_csv(losses, loss_csv)
    _write_manifest(args.out + ".manifest.json", "train",
                    {k: v for k, v in vars(args).items() if k != "func"},
                    [], [args.out, loss_csv],
                    metrics={"final_loss": losses[-1][1] if losses else None,
                             "windows": len(windows)})
    return 0


def _load_model(args) -> SequenceModel:
    bank = formats.read_filter_bank(args.bank)
    if args.integrator == "flux":
        if not args.bank_y:
            raise ValueError("--integrator flux needs --bank-y")
        return SequenceModel.from_flux_banks(bank, formats.read_filter_bank(args.bank_y),
                                             dt=args.dt)
    return SequenceModel.from_bank(bank, dt=args.dt, integrator=args.integrator)


def cmd_evolve(args) -> int:
    scale = _intensity_scale(args)
    u0 = imgio.read_gray(args.input, scale=scale)
    model = _load_model(args)
    seq = evolve(model, u0, args.steps, guard=None if args.no_guard else "default")
    imgio.write_sequence(seq, args.out, bits=args.bits, scale=scale, metadata={
        "bank": args.bank, "integrator": args.integrator})
    m0 = float(seq[0].data.mean())
    drift = abs(float(seq[-1].data.mean()) - m0) / max(abs(m0), 1e-300)
    _write_manifest(os.path.join(args.out, "manifest.json"), "evolve",
                    {k: v for k, v in vars(args).items() if k != "func"},
                    [args.bank, args.input], [args.out],
                    metrics={"mean_drift_rel": drift})
    return 0


def _metric_rows(ref: FrameSequence, test: FrameSequence, metrics: list, peak: float):
    if len(ref) != len(test):
        raise ValueError(f"frame count mismatch: {len(ref)} vs {len(test)}")
    rows = []
    for k in range(len(ref)):
        row = {"frame": k}
        if "psnr" in metrics:
            row["psnr"] = psnr(ref[k], test[k], peak)
        if "ssim" in metrics:
            row["ssim"] = mean_ssim(ref[k], test[k], peak)
        rows.append(row)
    return rows


def cmd_eval(args) -> int:
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    ref, meta = imgio.read_sequence(args.reference_seq)
    peak = args.peak if args.peak is not None else meta.get("scale", 255.0)
    inputs = [args.reference_seq]
    if args.test_seq:
        test, _ = imgio.read_sequence(args.test_seq)
        inputs.append(args.test_seq)
    else:
        if not (args.bank and args.input):
            raise ValueError("eval needs either --test-seq or --bank with --input")
        u0 = imgio.read_gray(args.input, scale=peak)
        model = SequenceModel.from_bank(formats.read_filter_bank(args.bank), dt=ref.dt)
        test = evolve(model, u0, len(ref) - 1)
        inputs.extend([args.bank, args.input])
    rows = _metric_rows(ref, test, metrics, peak)
    with open(args.out, "w") as f:
        cols = ["frame"] + metrics
        f.write(",".join(cols) + "\n")
        for row in rows:
            f.write(",".join(repr(row[c]) if c != "frame" else str(row[c])
                             for c in cols) + "\n")
    summary = {}
    for m in metrics:
        vals = [row[m] for row in rows if np.isfinite(row[m])]
        summary[m] = float(np.mean(vals)) if vals else float("inf")
    _write_manifest(args.out + ".manifest.json", "eval",
                    {k: v for k, v in vars(args).items() if k != "func"},
                    inputs, [args.out], metrics=summary)
    return 0


def cmd_apply_deconv(args) -> int:
    f = imgio.read_gray(args.input)
    bank = formats.read_filter_bank(args.bank)
    dm = apps.DegradationModel(apps.gaussian_psf(args.sigma_blur), 1, args.lam)
    out = apps.deconv_restore(bank, f, dm, args.steps, dt=args.dt)
    imgio.write_gray(out, args.out, bits=args.bits)
    metrics = {}
    inputs = [args.input, args.bank]
    if args.truth:
        truth = imgio.read_gray(args.truth)
        metrics = {"psnr_in": psnr(truth, f), "psnr_out": psnr(truth, out),
                   "ssim_in": mean_ssim(truth, f), "ssim_out": mean_ssim(truth, out)}
        inputs.append(args.truth)
    _write_manifest(args.out + ".manifest.json", "apply deconv",
                    {k: v for k, v in vars(args).items() if k != "func"},
                    inputs, [args.out], metrics=metrics)
    return 0


def cmd_apply_upscale(args) -> int:
    f = imgio.read_gray(args.input)
    bank = formats.read_filter_bank(args.bank)
    dm = apps.DegradationModel(apps.gaussian_psf(args.psf_sigma),
                               args.factor, args.lam)
    if args.projected:
        out = apps.projected_upscale(bank, f, dm, args.steps, dt=args.dt)
    else:
        out = apps.upscale(bank, f, dm, args.steps, dt=args.dt)
    imgio.write_gray(out, args.out, bits=args.bits)
    _write_manifest(args.out + ".manifest.json", "apply upscale",
                    {k: v for k, v in vars(args).items() if k != "func"},
                    [args.input, args.bank], [args.out])
    return 0


def cmd_apply_segment(args) -> int:
    f = imgio.read_gray(args.input, scale=1.0)  # Chan-Vese weights assume 0..1 data
    if args.bank:
        curvature = formats.read_filter_bank(args.bank)
        inputs = [args.input, args.bank]
    else:
        curvature = apps.tv_curvature
        inputs = [args.input]
    ls = apps.checkerboard_levelset(f.shape, mu=args.mu, nu=args.nu,
                                    lambda1=args.lambda1, lambda2=args.lambda2,
                                    epsilon=args.epsilon)
    result = apps.chan_vese_evolve(curvature, f, ls, args.iters, dt=args.dt)
    mask = ImageGrid(result.mask().astype(np.float64))
    imgio.write_gray(mask, args.out, bits=8, scale=1.0)
    _write_manifest(args.out + ".manifest.json", "apply segment",
                    {k: v for k, v in vars(args).items() if k != "func"},
                    inputs, [args.out],
                    metrics={"c1": np.asarray(result.c1).tolist(),
                             "c2": np.asarray(result.c2).tolist()})
    return 0


def cmd_apply_resample(args) -> int:
    u = imgio.read_gray(args.input)
    flow = formats.read_flow(args.flow)
    inputs = [args.input, args.flow]
    if args.method == "bicubic":
        out = apps.bicubic_resample(u, flow)
    else:
        bx = formats.read_filter_bank(args.bank_x)
        by = formats.read_filter_bank(args.bank_y)
        inputs.extend([args.bank_x, args.bank_y])
        out = apps.resample(bx, by, u, flow)
    imgio.write_gray(out, args.out, bits=args.bits)
    _write_manifest(args.out + ".manifest.json", "apply resample",
                    {k: v for k, v in vars(args).items() if k != "func"},
                    inputs, [args.out])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bladepde",
                                     description="Image PDE toolkit: reference "
                                     "solvers and trained filter-bank models")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="reference runs, coarsened into training targets")
    p.add_argument("--pde", choices=PDE_NAMES, required=True)
    p.add_argument("--input-dir", required=True)
    p.add_argument("--scale", type=int, default=4)
    p.add_argument("--dt-hr", type=float, default=0.1)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--subsample-m", type=int, default=10)
    p.add_argument("--out", required=True)
    p.add_argument("--bits", type=int, choices=(8, 16), default=16)
    p.add_argument("--intensity-scale", type=float, default=None)
    _add_scheme_flags(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a filter bank on generated sequences")
    p.add_argument("--data", required=True)
    p.add_argument("--pde", choices=PDE_NAMES, default=None)
    p.add_argument("--unroll", type=int, default=10)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iters", type=int, default=200)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--lr", type=float, default=1e-5)
    p.add_argument("--footprint", type=int, default=5)
    p.add_argument("--ls-init", action=argparse.BooleanOptionalAction, default=True)
    _add_selection_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evolve", help="advance an image with a trained bank")
    p.add_argument("--bank", required=True)
    p.add_argument("--bank-y", default=None, help="y flux bank for --integrator flux")
    p.add_argument("--input", required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--dt", type=float, default=1.0)
    p.add_argument("--integrator", choices=("euler", "midpoint", "flux"), default="euler")
    p.add_argument("--out", required=True)
    p.add_argument("--bits", type=int, choices=(8, 16), default=16)
    p.add_argument("--intensity-scale", type=float, default=None)
    p.add_argument("--no-guard", action="store_true")
    p.set_defaults(func=cmd_evolve)

    p = sub.add_parser("eval", help="PSNR/SSIM between sequences")
    p.add_argument("--reference-seq", required=True)
    p.add_argument("--test-seq", default=None)
    p.add_argument("--bank", default=None)
    p.add_argument("--input", default=None)
    p.add_argument("--metrics", default="psnr,ssim")
    p.add_argument("--peak", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("apply", help="downstream applications")
    asub = p.add_subparsers(dest="application", required=True)

    q = asub.add_parser("deconv")
    q.add_argument("--bank", required=True)
    q.add_argument("--input", required=True)
    q.add_argument("--truth", default=None)
    q.add_argument("--sigma-blur", type=float, default=1.0)
    q.add_argument("--lam", type=float, default=2.0)
    q.add_argument("--steps", type=int, default=10)
    q.add_argument("--dt", type=float, default=0.4)
    q.add_argument("--out", required=True)
    q.add_argument("--bits", type=int, choices=(8, 16), default=8)
    q.set_defaults(func=cmd_apply_deconv)

    q = asub.add_parser("upscale")
    q.add_argument("--bank", required=True)
    q.add_argument("--input", required=True)
    q.add_argument("--factor", type=int, default=4)
    q.add_argument("--psf-sigma", type=float, default=0.4)
    q.add_argument("--lam", type=float, default=0.35)
    q.add_argument("--steps", type=int, default=10)
    q.add_argument("--dt", type=float, default=1.0)
    q.add_argument("--projected", action="store_true")
    q.add_argument("--out", required=True)
    q.add_argument("--bits", type=int, choices=(8, 16), default=8)
    q.set_defaults(func=cmd_apply_upscale)

    q = asub.add_parser("segment")
    q.add_argument("--bank", default=None, help="TV bank; omit for the reference term")
    q.add_argument("--input", required=True)
    q.add_argument("--mu", type=float, default=0.04)
    q.add_argument("--nu", type=float, default=0.0)
    q.add_argument("--lambda1", type=float, default=1.0)
    q.add_argument("--lambda2", type=float, default=1.0)
    q.add_argument("--dt", type=float, default=0.5)
    q.add_argument("--iters", type=int, default=300)
    q.add_argument("--epsilon", type=float, default=1.0)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_apply_segment)

    q = asub.add_parser("resample")
    q.add_argument("--bank-x", default=None)
    q.add_argument("--bank-y", default=None)
    q.add_argument("--input", required=True)
    q.add_argument("--flow", required=True)
    q.add_argument("--method", choices=("blade", "bicubic"), default="blade")
    q.add_argument("--out", required=True)
    q.add_argument("--bits", type=int, choices=(8, 16), default=8)
    q.set_defaults(func=cmd_apply_resample)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else 0
    try:
        return args.func(args)
    except InstabilityError as e:
        print(f"bladepde: instability: {e} (step {e.step})", file=sys.stderr)
        return 1
    except (OSError, ValueError, json.JSONDecodeError) as e:
        print(f"bladepde: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
