"""Procedural grayscale test images.

Piecewise-smooth scenes (soft-edged ellipses, bars, and gradients over a
smooth background, plus mild texture) rendered at a finer grid and area
downscaled, so edges are band-limited the way resampled photographs are.
Used for training corpora, held-out evaluation sets, and demo inputs.
"""

from __future__ import annotations

import numpy as np

from .grid import ColorImage, ImageGrid, downscale_area, gaussian_smooth_array


def _soft_mask(signed: np.ndarray, width: float) -> np.ndarray:
    t = np.clip(signed / max(width, 1e-9) + 0.5, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def _paint_scene(rng: np.random.Generator, n: int) -> np.ndarray:
    yy, xx = np.mgrid[0:n, 0:n] / n
    a0, ax, ay = rng.uniform(40, 215), rng.uniform(-70, 70), rng.uniform(-70, 70)
    img = a0 + ax * (xx - 0.5) + ay * (yy - 0.5)
    for _ in range(rng.integers(2, 5)):
        fx, fy = rng.uniform(0.5, 2.5, size=2)
        ph = rng.uniform(0, 2 * np.pi, size=2)
        img += rng.uniform(3, 18) * np.sin(2 * np.pi * fx * xx + ph[0]) \
            * np.sin(2 * np.pi * fy * yy + ph[1])
    edge = rng.uniform(0.002, 0.006)
    for _ in range(rng.integers(6, 14)):
        kind = rng.integers(0, 3)
        level = rng.uniform(10, 245)
        cx, cy = rng.uniform(0.1, 0.9, size=2)
        ang = rng.uniform(0, np.pi)
        ct, st = np.cos(ang), np.sin(ang)
        xr = ct * (xx - cx) + st * (yy - cy)
        yr = -st * (xx - cx) + ct * (yy - cy)
        if kind == 0:  # ellipse
            rx_, ry_ = rng.uniform(0.05, 0.3, size=2)
            q = np.sqrt((xr / rx_) ** 2 + (yr / ry_) ** 2)
            alpha = _soft_mask(1.0 - q, edge / min(rx_, ry_))
        elif kind == 1:  # rotated box
            bx, by = rng.uniform(0.05, 0.3, size=2)
            q = np.maximum(np.abs(xr) - bx, np.abs(yr) - by)
            alpha = _soft_mask(-q, edge)
        else:  # bar
            t = rng.uniform(0.01, 0.05)
            q = np.abs(yr) - t
            alpha = _soft_mask(-q, edge) * _soft_mask(0.45 - np.abs(xr), edge)
        img = img * (1 - alpha) + level * alpha
    img += gaussian_smooth_array(rng.normal(0, rng.uniform(2, 8), (n, n)), 1.5)
    return np.clip(img, 0.0, 255.0)


def synth_image(seed: int, size: int = 256, hires_factor: int = 2) -> ImageGrid:
    """One natural-like grayscale image on the 0..255 scale."""
    rng = np.random.default_rng(seed)
    hr = _paint_scene(rng, size * hires_factor)
    return downscale_area(ImageGrid(hr), hires_factor)


def make_corpus(count: int, size: int = 256, seed0: int = 1000) -> list:
    """Deterministic list of synthetic images with consecutive seeds."""
    return [synth_image(seed0 + i, size) for i in range(count)]


def synth_color_image(seed: int, size: int = 128) -> ColorImage:
    base = synth_image(seed, size).data
    rng = np.random.default_rng(seed + 77)
    chans = []
    for _ in range(3):
        gain = rng.uniform(0.6, 1.1)
        off = rng.uniform(-25, 25)
        chans.append(ImageGrid(np.clip(gain * base + off, 0, 255)))
    return ColorImage(*chans)


def smooth_blob_image(size: int = 128, peak: float = 255.0, sigma_frac: float = 0.18) -> ImageGrid:
    """Broad centered Gaussian bump, effectively band limited."""
    yy, xx = np.mgrid[0:size, 0:size]
    c = (size - 1) / 2.0
    s = sigma_frac * size
    return ImageGrid(peak * np.exp(-((xx - c) ** 2 + (yy - c) ** 2) / (2 * s * s)))


def two_level_image(size: int = 64, lo: float = 0.2, hi: float = 0.8,
                    radius_frac: float = 0.3) -> ImageGrid:
    """Piecewise-constant disk of value hi on a lo background."""
    yy, xx = np.mgrid[0:size, 0:size]
    c = (size - 1) / 2.0
    inside = (xx - c) ** 2 + (yy - c) ** 2 <= (radius_frac * size) ** 2
    return ImageGrid(np.where(inside, hi, lo).astype(np.float64))


def add_noise(img: ImageGrid, sigma: float, seed: int = 0,
              clip: tuple | None = None) -> ImageGrid:
    rng = np.random.default_rng(seed)
    out = img.data + rng.normal(0.0, sigma, img.shape)
    if clip is not None:
        out = np.clip(out, *clip)
    return img.like(out)


def plate_image(seed: int, size: int = 128, nstrokes: int = 140) -> ImageGrid:
    """Dense dark strokes on a light background, text-plate style.

    Sharp detail everywhere, so blur dominates the degradation; the standard
    subject for the deconvolution demo.
    """
    rng = np.random.default_rng(seed)
    n = size * 2
    yy, xx = np.mgrid[0:n, 0:n] / n
    img = np.full((n, n), rng.uniform(170, 215))
    for _ in range(nstrokes):
        cx, cy = rng.uniform(0.02, 0.98, 2)
        ang = rng.uniform(0, np.pi)
        ct, st = np.cos(ang), np.sin(ang)
        xr = ct * (xx - cx) + st * (yy - cy)
        yr = -st * (xx - cx) + ct * (yy - cy)
        ln = rng.uniform(0.02, 0.09)
        th = rng.uniform(0.003, 0.010)
        img[(np.abs(xr) < ln) & (np.abs(yr) < th)] = rng.uniform(5, 90)
    return downscale_area(ImageGrid(img), 2)


def grating_image(seed: int, size: int = 256) -> ImageGrid:
    """Oriented gratings under smooth envelopes; the fine-texture end of the
    corpus (fabric, text, foliage analogues)."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    img = np.full((size, size), 128.0)
    for _ in range(rng.integers(2, 5)):
        kmag = rng.uniform(0.05, 0.115) * np.pi
        th = rng.uniform(0, np.pi)
        kx, ky = kmag * np.cos(th), kmag * np.sin(th)
        cx, cy = rng.uniform(0, size, 2)
        env = rng.uniform(40, 120)
        amp = rng.uniform(25, 55)
        ph = rng.uniform(0, 2 * np.pi)
        img += amp * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * env ** 2)) \
            * np.sin(kx * xx + ky * yy + ph)
    return ImageGrid(np.clip(img, 0.0, 255.0))


def make_resampler_corpus(count: int = 24, size: int = 256, seed0: int = 3000) -> list:
    """Half natural-like scenes, half oriented texture."""
    n = count // 2
    return make_corpus(n, size, seed0) + [grating_image(seed0 + 5000 + i, size)
                                          for i in range(count - n)]


def oriented_sine_pair(seed: int, size: int = 64, delta: tuple = (0.25, 0.25),
                       psf_sigma: float = 0.5, kmin: float = 0.45,
                       kmax: float = 0.75) -> tuple:
    """One oriented sinusoid through the Gaussian observation model.

    Returns (observed, shifted ground truth), both exact analytic samples;
    the displaced target uses the same blur attenuation.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    kmag = rng.uniform(kmin, kmax) * np.pi
    th = rng.uniform(0, np.pi)
    kx, ky = kmag * np.cos(th), kmag * np.sin(th)
    amp = rng.uniform(30, 60)
    ph = rng.uniform(0, 2 * np.pi)
    attn = amp * np.exp(-0.5 * psf_sigma ** 2 * kmag ** 2)
    img = 128.0 + attn * np.sin(kx * xx + ky * yy + ph)
    gt = 128.0 + attn * np.sin(kx * (xx + delta[0]) + ky * (yy + delta[1]) + ph)
    return ImageGrid(img), ImageGrid(gt)
