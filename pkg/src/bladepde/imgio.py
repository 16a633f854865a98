"""Reading and writing images and frame sequences.

Supports 8-bit and 16-bit PNG and PGM/PPM. Samples are real-valued inside the
toolkit and quantized only at export; ``scale`` is the intensity that maps to
full code value (255 for natural images, 1.0 for phase-field data).
"""

from __future__ import annotations

import json
import os

import numpy as np
from PIL import Image

from .grid import ColorImage, FrameSequence, ImageGrid


def _quantize(data: np.ndarray, bits: int, scale: float) -> np.ndarray:
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    top = (1 << bits) - 1
    q = np.rint(np.clip(data / scale, 0.0, 1.0) * top)
    return q.astype(np.uint8 if bits == 8 else np.uint16)


def _dequantize(raw: np.ndarray, scale: float) -> np.ndarray:
    if raw.dtype == np.uint8:
        top = 255
    elif raw.dtype in (np.uint16, np.int32):
        top = 65535
    else:
        raise ValueError(f"unsupported sample type {raw.dtype}")
    return raw.astype(np.float64) * (scale / top)


def write_gray(img: ImageGrid, path: str, bits: int = 8, scale: float = 255.0) -> None:
    Image.fromarray(_quantize(img.data, bits, scale)).save(path)


def read_gray(path: str, scale: float = 255.0) -> ImageGrid:
    im = Image.open(path)
    if im.mode in ("RGB", "RGBA"):
        im = im.convert("L")
    raw = np.array(im)
    if raw.ndim != 2:
        raise ValueError(f"{path}: expected a single-channel image")
    return ImageGrid(_dequantize(raw, scale))


def write_color(c: ColorImage, path: str, bits: int = 8, scale: float = 255.0) -> None:
    planes = [_quantize(ch.data, bits, scale) for ch in c.channels()]
    Image.fromarray(np.stack(planes, axis=-1)).save(path)


def read_color(path: str, scale: float = 255.0) -> ColorImage:
    raw = np.array(Image.open(path).convert("RGB"))
    chans = [ImageGrid(_dequantize(raw[:, :, i], scale)) for i in range(3)]
    return ColorImage(*chans)


def write_sequence(seq: FrameSequence, outdir: str, bits: int = 16,
                   scale: float = 255.0, metadata: dict | None = None) -> None:
    """Numbered PNG frames plus a JSON sidecar describing the run."""
    os.makedirs(outdir, exist_ok=True)
    for k, frame in enumerate(seq.frames):
        write_gray(frame, os.path.join(outdir, f"frame_{k:04d}.png"), bits=bits, scale=scale)
    sidecar = {
        "frames": len(seq.frames),
        "dt": seq.dt,
        "dx": seq.frames[0].dx,
        "bits": bits,
        "scale": scale,
    }
    sidecar.update(metadata or {})
    with open(os.path.join(outdir, "sequence.json"), "w") as f:
        json.dump(sidecar, f, indent=2, sort_keys=True)
        f.write("\n")


def read_sequence(indir: str) -> tuple[FrameSequence, dict]:
    with open(os.path.join(indir, "sequence.json")) as f:
        meta = json.load(f)
    scale = meta.get("scale", 255.0)
    frames = []
    for k in range(meta["frames"]):
        frames.append(read_gray(os.path.join(indir, f"frame_{k:04d}.png"), scale=scale))
    if "dx" in meta:
        frames = [ImageGrid(fr.data, meta["dx"]) for fr in frames]
    return FrameSequence(frames, meta["dt"]), meta
