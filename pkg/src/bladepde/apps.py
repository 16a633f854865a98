"""Downstream applications of trained filter banks, reused without retraining.

Fidelity-regularized restoration and deconvolution, upscaling (iterative and
projected), Chan-Vese segmentation with a learned curvature term, displaced
resampling with learned derivative filters, and the color extension.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal

from .features import calibrate_thresholds, select_map
from .grid import (
    ColorImage,
    ImageGrid,
    convolve_replicate,
    convolve_replicate_adjoint,
    correlate_replicate,
    gaussian_kernel1d,
    luma,
    shift_extended,
)
from .net import FilterBank, blade_apply, select_and_apply
from .train import TrainConfig


def gaussian_psf(sigma: float, radius: int | None = None) -> np.ndarray:
    """Normalized 2-D Gaussian kernel.

    Default truncation follows the toolkit rule (radius ceil(4 sigma)); an
    explicit radius gives a tighter kernel, e.g. so a psf autocorrelation
    fits a filter footprint.
    """
    if radius is None:
        k = gaussian_kernel1d(sigma)
    else:
        x = np.arange(-radius, radius + 1, dtype=np.float64)
        k = np.exp(-0.5 * (x / sigma) ** 2) if sigma > 0 else (x == 0).astype(np.float64)
        k = k / k.sum()
    return np.outer(k, k)


@dataclass
class DegradationModel:
    """Observation model f = subsample(psf * u) + noise with fidelity weight."""

    psf: np.ndarray
    subsample_factor: int = 1
    lam: float = 0.0

    def __post_init__(self):
        self.psf = np.ascontiguousarray(self.psf, dtype=np.float64)
        if self.psf.ndim != 2 or self.psf.shape[0] % 2 == 0 or self.psf.shape[1] % 2 == 0:
            raise ValueError("psf must be 2-D with odd dimensions")
        if abs(self.psf.sum() - 1.0) > 1e-10:
            raise ValueError("psf must sum to 1")
        if self.subsample_factor < 1:
            raise ValueError("subsample_factor must be >= 1")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")


def apply_A(dm: DegradationModel, u: ImageGrid) -> ImageGrid:
    """Blur (replicate boundary) then keep every factor-th sample."""
    r = dm.subsample_factor
    if u.height % r or u.width % r:
        raise ValueError("image dimensions must be divisible by the subsample factor")
    blurred = convolve_replicate(u.data, dm.psf)
    return ImageGrid(blurred[::r, ::r])


def apply_At(dm: DegradationModel, v: ImageGrid, hr_shape: tuple) -> ImageGrid:
    """Exact adjoint of apply_A: zero-upsample, then the blur adjoint."""
    r = dm.subsample_factor
    if hr_shape != (v.height * r, v.width * r):
        raise ValueError("hr_shape inconsistent with the subsample factor")
    up = np.zeros(hr_shape)
    up[::r, ::r] = v.data
    return ImageGrid(convolve_replicate_adjoint(up, dm.psf))


def restore_step(bank: FilterBank, u: ImageGrid, f: ImageGrid,
                 dm: DegradationModel, dt: float = 1.0) -> ImageGrid:
    """One Euler step with the data-fidelity force added to the estimator."""
    d = select_and_apply(bank, u).data
    if dm.lam != 0.0:
        resid = f.data - apply_A(dm, u).data
        d = d + dm.lam * apply_At(dm, ImageGrid(resid), u.shape).data
    return u.like(u.data + dt * d)


def psf_autocorrelation(psf: np.ndarray) -> np.ndarray:
    """The kernel of A^T A for pure convolution: reversed psf convolved with psf."""
    return signal.correlate(psf, psf, mode="full", method="direct")


def absorb_deconv(bank: FilterBank, dm: DegradationModel) -> FilterBank:
    """Fold the -lam * (psf~ * psf) correction into every filter.

    After absorption the deconvolution evolution needs only the constant
    forcing term lam * (psf~ * f) per step.
    """
    corr = psf_autocorrelation(dm.psf)
    fp = bank.footprint
    ch, cw = corr.shape
    if ch > fp.height or cw > fp.width:
        raise ValueError(
            f"psf autocorrelation {cw}x{ch} exceeds the {fp.width}x{fp.height} "
            f"footprint; use a bank with a larger footprint")
    canvas = np.zeros((fp.height, fp.width))
    oy = (fp.height - ch) // 2
    ox = (fp.width - cw) // 2
    canvas[oy:oy + ch, ox:ox + cw] = corr
    taps = bank.taps - dm.lam * canvas.ravel()[None, :]
    return FilterBank(taps, fp, bank.selection)


def deconv_forcing(dm: DegradationModel, f: ImageGrid) -> np.ndarray:
    """Constant per-step term lam * (psf~ * f), replicate boundary."""
    return dm.lam * correlate_replicate(f.data, dm.psf)


def deconv_restore(bank: FilterBank, f: ImageGrid, dm: DegradationModel,
                   steps: int, dt: float = 1.0) -> ImageGrid:
    """Deconvolution with absorbed filters, starting from the observation.

    The bank is first embedded into a footprint large enough to hold the psf
    autocorrelation, which leaves its output unchanged.
    """
    from .net import Footprint, embed_footprint

    corr = psf_autocorrelation(dm.psf)
    fp = bank.footprint
    if corr.shape[0] > fp.height or corr.shape[1] > fp.width:
        bank = embed_footprint(bank, Footprint(max(corr.shape[1], fp.width),
                                               max(corr.shape[0], fp.height)))
    absorbed = absorb_deconv(bank, dm)
    force = deconv_forcing(dm, f)
    u = f.copy()
    for _ in range(steps):
        u = u.like(u.data + dt * (select_and_apply(absorbed, u).data + force))
    return u


LANCZOS_TAPS = 3


def _lanczos_weights(frac: float) -> np.ndarray:
    x = frac - np.arange(-LANCZOS_TAPS + 1, LANCZOS_TAPS + 1)
    w = np.sinc(x) * np.sinc(x / LANCZOS_TAPS)
    return w / w.sum()


def _lanczos_axis(a: np.ndarray, factor: int, axis: int) -> np.ndarray:
    if factor == 1:
        return a.copy()
    a = np.moveaxis(a, axis, 0)
    n = a.shape[0]
    out = np.empty((n * factor,) + a.shape[1:])
    for phase in range(factor):
        w = _lanczos_weights(phase / factor)
        acc = np.zeros(a.shape)
        for t, wt in enumerate(w):
            src = np.clip(np.arange(n) + (t - LANCZOS_TAPS + 1), 0, n - 1)
            acc += wt * a[src]
        out[phase::factor] = acc
    return np.moveaxis(out, 0, axis)


def lanczos_upscale(img: ImageGrid, factor: int) -> ImageGrid:
    """Separable Lanczos-3 upscaling aligned so sample 0 maps to sample 0."""
    out = _lanczos_axis(img.data, factor, 0)
    out = _lanczos_axis(out, factor, 1)
    return ImageGrid(out)


def upscale(bank: FilterBank, f: ImageGrid, dm: DegradationModel,
            steps: int, dt: float = 1.0) -> ImageGrid:
    """Lanczos initialization followed by restore-style iterations."""
    u = lanczos_upscale(f, dm.subsample_factor)
    for _ in range(steps):
        u = restore_step(bank, u, f, dm, dt)
    return u


class SpectralProjector:
    """Orthogonal projector onto {u : subsample(psf * u) = 0}, periodic.

    Also provides the minimum-norm preimage used to initialize projected
    upscaling, so f = subsample(psf * u0) holds exactly.
    """

    def __init__(self, dm: DegradationModel, hr_shape: tuple, eps: float = 1e-12):
        self.r = dm.subsample_factor
        self.hr_shape = hr_shape
        h, w = hr_shape
        if h % self.r or w % self.r:
            raise ValueError("hr_shape must be divisible by the subsample factor")
        kernel = np.zeros(hr_shape)
        kh, kw = dm.psf.shape
        kernel[:kh, :kw] = dm.psf
        # Center the psf on the origin of the periodic grid.
        kernel = np.roll(kernel, (-(kh // 2), -(kw // 2)), axis=(0, 1))
        self.phat = np.fft.fft2(kernel)
        lr = (h // self.r, w // self.r)
        gram = self._coset_sum(np.abs(self.phat) ** 2).real
        self.gram = np.maximum(gram, eps * gram.max())
        self.lr_shape = lr

    def _coset_sum(self, spectrum: np.ndarray) -> np.ndarray:
        r = self.r
        h, w = self.hr_shape
        return spectrum.reshape(r, h // r, r, w // r).sum(axis=(0, 2)) / (r * r)

    def _forward_hat(self, vhat: np.ndarray) -> np.ndarray:
        return self._coset_sum(self.phat * vhat)

    def apply_A(self, u: ImageGrid) -> ImageGrid:
        """Periodic counterpart of the degradation model."""
        s = np.fft.ifft2(self._forward_hat(np.fft.fft2(u.data))).real
        return ImageGrid(s)

    def project(self, v: ImageGrid) -> ImageGrid:
        vhat = np.fft.fft2(v.data)
        s = self._forward_hat(vhat) / self.gram
        vhat -= np.conj(self.phat) * np.tile(s, (self.r, self.r))
        return ImageGrid(np.fft.ifft2(vhat).real)

    def consistent_init(self, f: ImageGrid) -> ImageGrid:
        s = np.fft.fft2(f.data) / self.gram
        uhat = np.conj(self.phat) * np.tile(s, (self.r, self.r))
        return ImageGrid(np.fft.ifft2(uhat).real)


def project_upscale_step(bank: FilterBank, u: ImageGrid, proj: SpectralProjector,
                         dt: float = 1.0) -> ImageGrid:
    """u + dt * P0(BLADE(u)): evolves without ever leaving the data manifold."""
    return u.like(u.data + dt * proj.project(select_and_apply(bank, u)).data)


def projected_upscale(bank: FilterBank, f: ImageGrid, dm: DegradationModel,
                      steps: int, dt: float = 1.0) -> ImageGrid:
    hr_shape = (f.height * dm.subsample_factor, f.width * dm.subsample_factor)
    proj = SpectralProjector(dm, hr_shape)
    u = proj.consistent_init(f)
    for _ in range(steps):
        u = project_upscale_step(bank, u, proj, dt)
    return u


# ---------------------------------------------------------------------------
# Chan-Vese segmentation


@dataclass
class LevelSet:
    """Level-set function with the segmentation weights and region values."""

    phi: ImageGrid
    epsilon: float = 1.0
    mu: float = 0.2
    nu: float = 0.0
    lambda1: float = 1.0
    lambda2: float = 1.0
    c1: object = 0.0
    c2: object = 0.0

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")

    def mask(self) -> np.ndarray:
        return self.phi.data > 0


def checkerboard_levelset(shape: tuple, period: float = 5.0, **kwargs) -> LevelSet:
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    phi = np.sin(np.pi * xx / period) * np.sin(np.pi * yy / period)
    return LevelSet(ImageGrid(phi), **kwargs)


def smoothed_heaviside(t: np.ndarray, eps: float) -> np.ndarray:
    return 0.5 * (1.0 + (2.0 / np.pi) * np.arctan(t / eps))


def smoothed_delta(t: np.ndarray, eps: float) -> np.ndarray:
    return (eps / np.pi) / (eps * eps + t * t)


def _channel_data(f) -> list:
    if isinstance(f, ColorImage):
        return [ch.data for ch in f.channels()]
    return [f.data]


def _region_means(chans: list, weight: np.ndarray):
    wsum = weight.sum()
    if wsum < 1e-9:
        return None
    return np.array([float((c * weight).sum() / wsum) for c in chans])


def tv_curvature(phi: ImageGrid, epsilon_reg: float = 1e-4) -> ImageGrid:
    """Reference curvature term: the TV-flow divergence of the level set."""
    from .refsolve import tv_flow_divergence

    return tv_flow_divergence(phi, epsilon_reg)


def chan_vese_evolve(curvature, f, ls: LevelSet, steps: int, dt: float = 0.5,
                     record_energy: bool = False):
    """Alternate region-mean updates with level-set descent steps.

    ``curvature`` is either a trained FilterBank (its output replaces the
    div(grad phi / |grad phi|) term) or a callable ImageGrid -> ImageGrid.
    The returned LevelSet reports c1, c2 as the plain means of the final
    segmentation regions; during evolution the means are weighted by the
    smoothed Heaviside as the energy prescribes.
    """
    if isinstance(curvature, FilterBank):
        bank = curvature
        curv = lambda p: select_and_apply(bank, p)
    else:
        curv = curvature
    chans = _channel_data(f)
    phi = ls.phi.data.copy()
    eps = ls.epsilon
    c1 = np.atleast_1d(np.asarray(ls.c1, dtype=np.float64) * np.ones(len(chans)))
    c2 = np.atleast_1d(np.asarray(ls.c2, dtype=np.float64) * np.ones(len(chans)))
    energies = []
    for _ in range(steps):
        h = smoothed_heaviside(phi, eps)
        m1 = _region_means(chans, h)
        m2 = _region_means(chans, 1.0 - h)
        if m1 is not None:
            c1 = m1
        if m2 is not None:
            c2 = m2
        fit = np.zeros_like(phi)
        for c, a1, a2 in zip(chans, c1, c2):
            fit += -ls.lambda1 * (c - a1) ** 2 + ls.lambda2 * (c - a2) ** 2
        k = curv(ImageGrid(phi)).data
        phi = phi + dt * smoothed_delta(phi, eps) * (ls.mu * k - ls.nu + fit)
        if record_energy:
            energies.append(_chan_vese_energy_arrays(chans, phi, eps, ls, c1, c2))
    inside = phi > 0
    final_c1 = _region_means(chans, inside.astype(np.float64))
    final_c2 = _region_means(chans, (~inside).astype(np.float64))
    out = LevelSet(ImageGrid(phi), eps, ls.mu, ls.nu, ls.lambda1, ls.lambda2,
                   c1=final_c1 if final_c1 is not None else c1,
                   c2=final_c2 if final_c2 is not None else c2)
    return (out, energies) if record_energy else out


def _gradient_magnitude(a: np.ndarray) -> np.ndarray:
    gx = 0.5 * (shift_extended(a, 0, 1) - shift_extended(a, 0, -1))
    gy = 0.5 * (shift_extended(a, 1, 0) - shift_extended(a, -1, 0))
    return np.sqrt(gx * gx + gy * gy)


def _chan_vese_energy_arrays(chans, phi, eps, ls: LevelSet, c1, c2) -> float:
    h = smoothed_heaviside(phi, eps)
    e = ls.mu * np.sum(smoothed_delta(phi, eps) * _gradient_magnitude(phi))
    e += ls.nu * np.sum(h)
    for c, a1, a2 in zip(chans, c1, c2):
        e += ls.lambda1 * np.sum((c - a1) ** 2 * h)
        e += ls.lambda2 * np.sum((c - a2) ** 2 * (1.0 - h))
    return float(e)


def chan_vese_energy(f, ls: LevelSet) -> float:
    """Segmentation energy with the TV term as discrete |grad phi|."""
    chans = _channel_data(f)
    c1 = np.atleast_1d(np.asarray(ls.c1, dtype=np.float64) * np.ones(len(chans)))
    c2 = np.atleast_1d(np.asarray(ls.c2, dtype=np.float64) * np.ones(len(chans)))
    return _chan_vese_energy_arrays(chans, ls.phi.data, ls.epsilon, ls, c1, c2)


# ---------------------------------------------------------------------------
# Displaced resampling


@dataclass
class FlowField:
    """Per-pixel displacement in pixels; the sample for output pixel i is
    taken at i + (vx_i, vy_i)."""

    vx: np.ndarray
    vy: np.ndarray

    def __post_init__(self):
        self.vx = np.ascontiguousarray(self.vx, dtype=np.float64)
        self.vy = np.ascontiguousarray(self.vy, dtype=np.float64)
        if self.vx.shape != self.vy.shape or self.vx.ndim != 2:
            raise ValueError("flow planes must be 2-D and share dimensions")
        if not (np.all(np.isfinite(self.vx)) and np.all(np.isfinite(self.vy))):
            raise ValueError("flow must be finite")

    @classmethod
    def constant(cls, shape: tuple, vx: float, vy: float) -> "FlowField":
        return cls(np.full(shape, vx), np.full(shape, vy))


def _split_flow(v: np.ndarray):
    # Nearest integer with ties toward +inf keeps the fraction in [-1/2, 1/2).
    n = np.floor(v + 0.5).astype(np.int64)
    return n, v - n


def _gather_displaced(a: np.ndarray, nx: np.ndarray, ny: np.ndarray) -> np.ndarray:
    h, w = a.shape
    yy, xx = np.mgrid[0:h, 0:w]
    return a[np.clip(yy + ny, 0, h - 1), np.clip(xx + nx, 0, w - 1)]


def resample(bank_x: FilterBank, bank_y: FilterBank, u: ImageGrid,
             flow: FlowField) -> ImageGrid:
    """Integer gather plus learned fractional correction.

    The displacement splits into a nearest-integer shift (replicate gather)
    and a fractional part in [-1/2, 1/2); the correction applies the
    derivative estimates to the integer-shifted image, scaled per pixel by
    the fractional displacement.
    """
    if flow.vx.shape != u.shape:
        raise ValueError("flow dimensions must match the image")
    nx, dx = _split_flow(flow.vx)
    ny, dy = _split_flow(flow.vy)
    z = ImageGrid(_gather_displaced(u.data, nx, ny), u.dx)
    gx = select_and_apply(bank_x, z).data
    gy = select_and_apply(bank_y, z).data
    return u.like(z.data + dx * gx + dy * gy)


_CR_MATRIX = 0.5 * np.array([
    [0.0, 2.0, 0.0, 0.0],
    [-1.0, 0.0, 1.0, 0.0],
    [2.0, -5.0, 4.0, -1.0],
    [-1.0, 3.0, -3.0, 1.0],
])


def _catmull_rom_weights(t: np.ndarray) -> list:
    powers = [np.ones_like(t), t, t * t, t * t * t]
    return [sum(_CR_MATRIX[p, k] * powers[p] for p in range(4)) for k in range(4)]


def bicubic_resample(u: ImageGrid, flow: FlowField) -> ImageGrid:
    """Catmull-Rom bicubic sampling at displaced positions, replicate boundary."""
    if flow.vx.shape != u.shape:
        raise ValueError("flow dimensions must match the image")
    a = u.data
    h, w = a.shape
    yy, xx = np.mgrid[0:h, 0:w]
    x = xx + flow.vx
    y = yy + flow.vy
    xi = np.floor(x).astype(np.int64)
    yi = np.floor(y).astype(np.int64)
    wx = _catmull_rom_weights(x - xi)
    wy = _catmull_rom_weights(y - yi)
    out = np.zeros_like(a)
    for j in range(4):
        ry = np.clip(yi + (j - 1), 0, h - 1)
        for i in range(4):
            rx = np.clip(xi + (i - 1), 0, w - 1)
            out += wy[j] * wx[i] * a[ry, rx]
    return u.like(out)


def _resampler_triples(hr: ImageGrid, factor: int, psf_sigma: float,
                       noise_sigma: float = 0.0, seed: int = 0):
    """(observed, residuals, deltas, valid) data from fine-grid integer shifts.

    The delta grid is symmetric (an asymmetric grid biases the fitted
    derivative response with a spurious even component). Observation noise is
    added to the patches only, so the filters learn to ignore it. ``valid``
    masks out the border band where the replicate-extended shift corrupts the
    targets.
    """
    blur = gaussian_psf(psf_sigma * factor)
    blurred = convolve_replicate(hr.data, blur)
    observed = blurred[::factor, ::factor]
    fracs = [i / factor for i in range(-(factor // 2) + 1, factor // 2)]
    triples = []
    for dx in fracs:
        for dy in fracs:
            shifted = shift_extended(blurred, int(round(dy * factor)), int(round(dx * factor)))
            triples.append((dx, dy, shifted[::factor, ::factor] - observed))
    margin = int(np.ceil((blur.shape[0] // 2 + factor // 2) / factor))
    valid = np.zeros(observed.shape, dtype=bool)
    valid[margin:-margin, margin:-margin] = True
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        observed = observed + rng.normal(0.0, noise_sigma, observed.shape)
    return ImageGrid(observed), triples, valid


def train_resampler(corpus: list, psf_sigma: float, cfg: TrainConfig,
                    selection=None, noise_sigma: float = 2.0):
    """Closed-form least squares for the derivative bank pair.

    Data: each fine-grid image is blurred, shifted by every integer multiple
    of the coarse pixel strictly inside half a pixel, and subsampled; the two
    banks jointly explain the shifted-minus-observed residuals scaled by the
    fractional displacement. Normal equations are solved per selection bucket.
    """
    from .features import SelectionConfig
    from .train import _patch_matrix

    if not corpus:
        raise ValueError("resampler training corpus is empty")
    proto = selection or SelectionConfig(
        orientation_bins=24, strength_thresholds=(0.0, 0.0),
        coherence_thresholds=(0.0, 0.0), rho=1.0)
    factor = cfg.spatial_factor
    prepared = [_resampler_triples(img, factor, psf_sigma, noise_sigma, seed=cfg.seed + i)
                for i, img in enumerate(corpus)]
    sel_cfg = calibrate_thresholds([obs for obs, _, _ in prepared], proto)
    bank_x = FilterBank.zeros(sel_cfg)
    bank_y = FilterBank.zeros(sel_cfg)
    k_filters = sel_cfg.num_filters
    area = bank_x.footprint.area
    p2 = np.zeros((k_filters, area, area))
    bx = np.zeros((k_filters, area))
    by = np.zeros((k_filters, area))
    # The delta grid is the same for every image, so the quadratic-form
    # scalars multiply the pooled patch Gram matrices directly.
    sxx = sum(dx * dx for dx, dy, _ in prepared[0][1])
    syy = sum(dy * dy for dx, dy, _ in prepared[0][1])
    sxy = sum(dx * dy for dx, dy, _ in prepared[0][1])
    for observed, triples, valid in prepared:
        keep = valid.ravel()
        sel = select_map(observed, sel_cfg).ravel()[keep]
        patches = _patch_matrix(observed, bank_x)[keep]
        order = np.argsort(sel, kind="stable")
        bounds = np.searchsorted(sel[order], np.arange(k_filters + 1))
        for k in range(k_filters):
            rows = order[bounds[k]:bounds[k + 1]]
            if rows.size:
                p2[k] += patches[rows].T @ patches[rows]
        for dx, dy, resid in triples:
            pr = np.zeros((k_filters, area))
            r = resid.ravel()[keep]
            for k in range(k_filters):
                rows = order[bounds[k]:bounds[k + 1]]
                if rows.size:
                    pr[k] = patches[rows].T @ r[rows]
            bx += dx * pr
            by += dy * pr
    eye = np.eye(2 * area)
    for k in range(k_filters):
        m = np.block([[sxx * p2[k], sxy * p2[k]], [sxy * p2[k], syy * p2[k]]])
        scale = max(np.trace(m) / (2 * area), 1.0)
        theta = np.linalg.solve(m + cfg.ls_ridge * scale * eye,
                                np.concatenate([bx[k], by[k]]))
        bank_x.taps[k] = theta[:area]
        bank_y.taps[k] = theta[area:]
    return bank_x, bank_y


def color_apply(bank: FilterBank, c: ColorImage) -> ColorImage:
    """One selection map from luma, then each channel filtered with it."""
    sel = select_map(luma(c), bank.selection)
    return ColorImage(*[blade_apply(bank, sel, ch) for ch in c.channels()])
