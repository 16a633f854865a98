"""Classical reference schemes for the four image PDEs.

All schemes are explicit (Cahn-Hilliard semi-implicit) steps on a unit-ish
grid. TV flow, Perona-Malik, and coherence-enhancing diffusion use replicate
boundaries, which makes the boundary fluxes vanish and the discrete mean
exactly conserved; Cahn-Hilliard is solved spectrally and is periodic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import (
    FrameSequence,
    ImageGrid,
    InstabilityError,
    correlate_replicate,
    correlate_replicate_adjoint,
    gaussian_smooth_array,
    shift_extended,
)

PDE_NAMES = ("tv_flow", "perona_malik", "ced", "cahn_hilliard")

# Stopping times (in PDE time units) that produce a moderate effect.
DEFAULT_STOP_TIME = {"tv_flow": 20.0, "perona_malik": 20.0, "ced": 40.0, "cahn_hilliard": 20.0}

# Rotation-optimized 3x3 derivative filters (x derivative; y is its transpose).
SCHARR_X = np.array([[-3.0, 0.0, 3.0],
                     [-10.0, 0.0, 10.0],
                     [-3.0, 0.0, 3.0]]) / 32.0
SCHARR_Y = SCHARR_X.T


@dataclass
class SchemeConfig:
    """Per-PDE parameters for the reference solvers and their BLADE twins.

    Intensities are 0..255 for the natural-image PDEs and 0..1 for
    Cahn-Hilliard (the double-well sits at 0 and 1).
    """

    pde: str = "tv_flow"
    dt: float = 0.1
    dx: float = 1.0
    c: float = 10.0            # Perona-Malik contrast (0..255 scale)
    alpha: float = 0.05        # CED base diffusivity
    C_ced: float = 1.0         # CED coherence sensitivity
    rho: float = 2.0           # CED structure-tensor smoothing
    gamma: float = 1.0         # Cahn-Hilliard interface parameter
    epsilon_reg: float = 1e-4  # TV denominator guard, intensity units

    def __post_init__(self):
        if self.pde not in PDE_NAMES:
            raise ValueError(f"unknown pde {self.pde!r}, expected one of {PDE_NAMES}")
        if self.dt <= 0 or self.dx <= 0:
            raise ValueError("dt and dx must be positive")
        if self.epsilon_reg <= 0:
            raise ValueError("epsilon_reg must be positive")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must be in (0, 1]")
        if self.c <= 0 or self.C_ced <= 0 or self.gamma <= 0 or self.rho < 0:
            raise ValueError("c, C_ced, gamma must be positive and rho non-negative")


def _one_sided(a: np.ndarray):
    """Forward/backward bare differences with replicate boundary."""
    dpx = shift_extended(a, 0, 1) - a
    dmx = a - shift_extended(a, 0, -1)
    dpy = shift_extended(a, 1, 0) - a
    dmy = a - shift_extended(a, -1, 0)
    return dpx, dmx, dpy, dmy


def _minmod(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return 0.5 * (np.sign(a) + np.sign(b)) * np.minimum(np.abs(a), np.abs(b))


def _backward_diff_flux(p: np.ndarray, axis: str) -> np.ndarray:
    """p_i - p_{i-1} with zero flux entering across the lower boundary."""
    out = p.copy()
    if axis == "x":
        out[:, 1:] -= p[:, :-1]
    else:
        out[1:, :] -= p[:-1, :]
    return out


def tv_flow_divergence(u: ImageGrid, epsilon_reg: float = 1e-4) -> ImageGrid:
    """div(grad u / |grad u|) discretized with one-sided differences.

    Unit edge fluxes from forward differences, guarded denominators
    sqrt(d^2 + minmod^2 + eps^2), and zero flux across the image boundary.
    """
    a = u.data
    eps2 = epsilon_reg ** 2
    dpx, dmx, dpy, dmy = _one_sided(a)
    p = dpx / np.sqrt(dpx ** 2 + _minmod(dpy, dmy) ** 2 + eps2)
    q = dpy / np.sqrt(dpy ** 2 + _minmod(dpx, dmx) ** 2 + eps2)
    return u.like(_backward_diff_flux(p, "x") + _backward_diff_flux(q, "y"))


def tv_flow_step(u: ImageGrid, cfg: SchemeConfig) -> ImageGrid:
    """Explicit total-variation flow step."""
    return u.like(u.data + cfg.dt * tv_flow_divergence(u, cfg.epsilon_reg).data)


def perona_malik_step(u: ImageGrid, cfg: SchemeConfig) -> ImageGrid:
    """Four-neighbor flux step with g(s) = 1 / (1 + s / c^2) on squared differences."""
    a = u.data
    c2 = cfg.c ** 2
    dpx, dmx, dpy, dmy = _one_sided(a)

    def g(s2):
        return 1.0 / (1.0 + s2 / c2)

    div = (g(dpx ** 2) * dpx - g(dmx ** 2) * dmx
           + g(dpy ** 2) * dpy - g(dmy ** 2) * dmy)
    return u.like(a + (cfg.dt / cfg.dx) * div)


def _ced_tensor(a: np.ndarray, cfg: SchemeConfig):
    ux = correlate_replicate(a, SCHARR_X)
    uy = correlate_replicate(a, SCHARR_Y)
    jxx = gaussian_smooth_array(ux * ux, cfg.rho)
    jxy = gaussian_smooth_array(ux * uy, cfg.rho)
    jyy = gaussian_smooth_array(uy * uy, cfg.rho)
    return ux, uy, jxx, jxy, jyy


def ced_step(u: ImageGrid, cfg: SchemeConfig) -> ImageGrid:
    """Coherence-enhancing diffusion div(D grad u) with rotation-optimized filters.

    D = mu1 w1 w1' + mu2 w2 w2' from the smoothed structure tensor, with
    mu1 = alpha and mu2 = alpha + (1 - alpha) exp(-C / (l1 - l2)^2) (mu2 =
    alpha when l1 = l2). The divergence is the negative adjoint of the
    gradient filters, which conserves the mean exactly.
    """
    a = u.data
    ux, uy, jxx, jxy, jyy = _ced_tensor(a, cfg)
    half_diff = 0.5 * (jxx - jyy)
    disc = np.sqrt(half_diff ** 2 + jxy ** 2)
    gap2 = (2.0 * disc) ** 2  # (l1 - l2)^2
    mu2 = np.where(gap2 > 0.0, cfg.alpha + (1.0 - cfg.alpha)
                   * np.exp(-cfg.C_ced / np.maximum(gap2, 1e-300)), cfg.alpha)
    # Eigenvector basis: w1 along (cos t, sin t) with t the dominant angle.
    theta = 0.5 * np.arctan2(2.0 * jxy, jxx - jyy)
    ct, st = np.cos(theta), np.sin(theta)
    dxx = cfg.alpha * ct * ct + mu2 * st * st
    dyy = cfg.alpha * st * st + mu2 * ct * ct
    dxy = (cfg.alpha - mu2) * ct * st
    flux_x = dxx * ux + dxy * uy
    flux_y = dxy * ux + dyy * uy
    div = -(correlate_replicate_adjoint(flux_x, SCHARR_X)
            + correlate_replicate_adjoint(flux_y, SCHARR_Y))
    return u.like(a + cfg.dt * div)


def double_well_derivative(a: np.ndarray) -> np.ndarray:
    """W'(u) for W(u) = u^2 (u - 1)^2."""
    return 2.0 * a * (a - 1.0) * (2.0 * a - 1.0)


def _laplacian_periodic(a: np.ndarray, dx: float) -> np.ndarray:
    return (np.roll(a, 1, axis=0) + np.roll(a, -1, axis=0)
            + np.roll(a, 1, axis=1) + np.roll(a, -1, axis=1) - 4.0 * a) / (dx * dx)


def _laplacian_symbol(shape: tuple, dx: float) -> np.ndarray:
    h, w = shape
    ky = 2.0 * np.pi * np.fft.fftfreq(h)
    kx = 2.0 * np.pi * np.fft.fftfreq(w)
    return ((2.0 * np.cos(ky)[:, None] + 2.0 * np.cos(kx)[None, :]) - 4.0) / (dx * dx)


def cahn_hilliard_step(u: ImageGrid, cfg: SchemeConfig) -> ImageGrid:
    """Semi-implicit step: (I + dt gamma Lap^2) u+ = u + dt Lap W'(u).

    The biharmonic term is inverted in the Fourier domain using the symbol of
    the 5-point Laplacian; this solver is periodic.
    """
    a = u.data
    rhs = a + cfg.dt * _laplacian_periodic(double_well_derivative(a), cfg.dx)
    sym = _laplacian_symbol(a.shape, cfg.dx)
    out = np.fft.ifft2(np.fft.fft2(rhs) / (1.0 + cfg.dt * cfg.gamma * sym * sym)).real
    return u.like(out)


_STEPS = {
    "tv_flow": tv_flow_step,
    "perona_malik": perona_malik_step,
    "ced": ced_step,
    "cahn_hilliard": cahn_hilliard_step,
}


def step_fn(cfg: SchemeConfig):
    return _STEPS[cfg.pde]


@dataclass(frozen=True)
class RangeGuard:
    """Flags runaway evolutions.

    Bounded-flux schemes (TV flow) oscillate at O(dt) amplitude without ever
    reaching inf when the step is too large, so non-finiteness alone cannot
    detect the blowup. Two additional monitors cover this:

    - envelope: samples stray beyond ``envelope_factor`` times the initial
      range (any scheme; catches genuine divergence),
    - contraction: samples exceed the initial range by more than a 10%%
      margin. Diffusion-type evolutions obey a discrete maximum principle, so
      this is the sharp detector for them; range-expanding dynamics like
      phase separation must not enable it.
    """

    center: float
    envelope_limit: float
    contraction_limit: float | None = None

    @classmethod
    def from_initial(cls, u0: ImageGrid, envelope_factor: float = 10.0,
                     contracting: bool = False, margin: float = 0.1,
                     floor: float = 1.0) -> "RangeGuard":
        lo = float(u0.data.min())
        hi = float(u0.data.max())
        width = hi - lo
        half = 0.5 * width
        contraction = half + max(margin * width, floor) if contracting else None
        return cls(center=0.5 * (lo + hi),
                   envelope_limit=half + envelope_factor * (width + floor),
                   contraction_limit=contraction)

    def check(self, a: np.ndarray, step: int) -> None:
        if not np.all(np.isfinite(a)):
            raise InstabilityError(step, f"non-finite sample at step {step}")
        dev = np.max(np.abs(a - self.center))
        if dev > self.envelope_limit:
            raise InstabilityError(
                step, f"samples left the stability envelope at step {step}")
        if self.contraction_limit is not None and dev > self.contraction_limit:
            raise InstabilityError(
                step, f"range expanded beyond the maximum principle at step {step}")


def run_reference(u0: ImageGrid, cfg: SchemeConfig, steps: int,
                  guard: RangeGuard | None | str = "default") -> FrameSequence:
    """Iterate the configured step operator, recording every frame.

    Raises InstabilityError naming the step index if the solution becomes
    non-finite or leaves the guard envelope. Pass guard=None to disable the
    envelope and check only for non-finite samples.
    """
    if steps < 0:
        raise ValueError("steps must be non-negative")
    if guard == "default":
        # The diffusions contract the range; phase separation expands it.
        guard = RangeGuard.from_initial(u0, contracting=cfg.pde != "cahn_hilliard")
    step = _STEPS[cfg.pde]
    frames = [u0.copy()]
    u = u0
    for k in range(1, steps + 1):
        u = step(u, cfg)
        if guard is not None:
            guard.check(u.data, k)
        elif not np.all(np.isfinite(u.data)):
            raise InstabilityError(k, f"non-finite sample at step {k}")
        frames.append(u)
    return FrameSequence(frames, cfg.dt)
