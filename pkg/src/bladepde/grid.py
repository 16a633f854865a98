"""Image containers, boundary handling, finite differences, and quality metrics.

Images are 2-D real-valued fields stored row major: ``data[n, m]`` is the
sample at column m (x) and row n (y). Boundary handling is replicate (clamp)
throughout, which realizes zero-flux borders for difference schemes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage


class InstabilityError(RuntimeError):
    """A time evolution produced a non-finite or runaway sample."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"evolution became unstable at step {step}")


@dataclass
class ImageGrid:
    """2-D scalar field with grid spacing dx (default 1 pixel)."""

    data: np.ndarray
    dx: float = 1.0

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or self.data.shape[0] < 1 or self.data.shape[1] < 1:
            raise ValueError(f"image data must be 2-D and non-empty, got shape {self.data.shape}")
        if self.dx <= 0:
            raise ValueError("dx must be positive")

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def copy(self) -> "ImageGrid":
        return ImageGrid(self.data.copy(), self.dx)

    def like(self, data: np.ndarray) -> "ImageGrid":
        """New grid with the same dx wrapping ``data``."""
        return ImageGrid(data, self.dx)


@dataclass
class ColorImage:
    """Three same-sized channels, R, G, B."""

    r: ImageGrid
    g: ImageGrid
    b: ImageGrid

    def __post_init__(self):
        if not (self.r.shape == self.g.shape == self.b.shape):
            raise ValueError("color channels must share dimensions")

    @property
    def shape(self) -> tuple:
        return self.r.shape

    def channels(self) -> tuple:
        return (self.r, self.g, self.b)


@dataclass
class FrameSequence:
    """Time-ordered frames u(0), u(dt), u(2 dt), ..."""

    frames: list = field(default_factory=list)
    dt: float = 1.0

    def __post_init__(self):
        if not self.frames:
            raise ValueError("frame sequence must contain at least one frame")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        shape = self.frames[0].shape
        for f in self.frames:
            if f.shape != shape:
                raise ValueError("all frames must share dimensions")

    def __len__(self) -> int:
        return len(self.frames)

    def __getitem__(self, k: int) -> ImageGrid:
        return self.frames[k]


def sample_extended(img: ImageGrid, m: int, n: int) -> float:
    """Sample u_{m,n} with replicate extension; m, n may be out of bounds."""
    mm = min(max(m, 0), img.width - 1)
    nn = min(max(n, 0), img.height - 1)
    return float(img.data[nn, mm])


def shift_extended(a: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """Array whose (n, m) entry is a[clamp(n+dy), clamp(m+dx)]."""
    h, w = a.shape
    iy = np.clip(np.arange(h) + dy, 0, h - 1)
    ix = np.clip(np.arange(w) + dx, 0, w - 1)
    return a[np.ix_(iy, ix)]


def finite_diff(img: ImageGrid, axis: str, side: str) -> ImageGrid:
    """One-sided difference (D+/- u)/dx with replicate boundary.

    Differences across the clamped border are zero, so forward differences
    vanish on the far edge and backward differences on the near edge.
    """
    if axis not in ("x", "y"):
        raise ValueError(f"axis must be 'x' or 'y', got {axis!r}")
    if side not in ("forward", "backward"):
        raise ValueError(f"side must be 'forward' or 'backward', got {side!r}")
    a = img.data
    dy, dx = (0, 1) if axis == "x" else (1, 0)
    if side == "forward":
        out = shift_extended(a, dy, dx) - a
    else:
        out = a - shift_extended(a, -dy, -dx)
    return img.like(out / img.dx)


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    """Discrete Gaussian truncated at radius ceil(4 sigma), renormalized to sum 1."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return np.array([1.0])
    radius = int(np.ceil(4.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_convolve(img: ImageGrid, sigma: float) -> ImageGrid:
    """Separable Gaussian smoothing with replicate boundary; sigma=0 is identity."""
    k = gaussian_kernel1d(sigma)
    if k.size == 1:
        return img.copy()
    out = ndimage.correlate1d(img.data, k, axis=0, mode="nearest")
    out = ndimage.correlate1d(out, k, axis=1, mode="nearest")
    return img.like(out)


def gaussian_smooth_array(a: np.ndarray, sigma: float) -> np.ndarray:
    """Same smoothing as gaussian_convolve on a bare array."""
    k = gaussian_kernel1d(sigma)
    if k.size == 1:
        return a.copy()
    out = ndimage.correlate1d(a, k, axis=0, mode="nearest")
    return ndimage.correlate1d(out, k, axis=1, mode="nearest")


def downscale_area(img: ImageGrid, factor: int) -> ImageGrid:
    """Block average over factor x factor cells; preserves the global mean."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    h, w = img.shape
    if h % factor or w % factor:
        raise ValueError(f"dimensions {w}x{h} not divisible by factor {factor}")
    a = img.data.reshape(h // factor, factor, w // factor, factor)
    return ImageGrid(a.mean(axis=(1, 3)), img.dx * factor)


def psnr(a: ImageGrid, b: ImageGrid, peak: float = 255.0) -> float:
    """10 log10(peak^2 / MSE); +inf when the images are identical."""
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if peak <= 0:
        raise ValueError("peak must be positive")
    mse = np.mean((a.data - b.data) ** 2)
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(peak * peak / mse))


SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


def _ssim_window_kernel() -> np.ndarray:
    x = np.arange(SSIM_WINDOW, dtype=np.float64) - (SSIM_WINDOW - 1) / 2
    k = np.exp(-0.5 * (x / SSIM_SIGMA) ** 2)
    return k / k.sum()


def _local_mean(a: np.ndarray, k: np.ndarray) -> np.ndarray:
    out = ndimage.correlate1d(a, k, axis=0, mode="nearest")
    return ndimage.correlate1d(out, k, axis=1, mode="nearest")


def mean_ssim(a: ImageGrid, b: ImageGrid, peak: float = 255.0) -> float:
    """Mean structural similarity, 11x11 Gaussian window (sigma 1.5).

    Stabilizers C1=(0.01 peak)^2, C2=(0.03 peak)^2; local statistics use
    replicate boundaries and the mean is taken over every pixel.
    """
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if min(a.shape) < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    k = _ssim_window_kernel()
    x, y = a.data, b.data
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    mx = _local_mean(x, k)
    my = _local_mean(y, k)
    mxx = _local_mean(x * x, k)
    myy = _local_mean(y * y, k)
    mxy = _local_mean(x * y, k)
    vx = mxx - mx * mx
    vy = myy - my * my
    cxy = mxy - mx * my
    ssim_map = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
    return float(ssim_map.mean())


def correlate_replicate(a: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Cross-correlation with replicate boundary: sum_k K_k a_{clip(i+k)}."""
    return ndimage.correlate(a, kernel, mode="nearest")


def correlate_replicate_adjoint(g: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Exact adjoint of correlate_replicate in its image argument.

    Border reads through the clamp become accumulations into the clamped
    cells, so <correlate(a), g> == <a, adjoint(g)> holds to roundoff.
    """
    h, w = g.shape
    kh, kw = kernel.shape
    ry, rx = kh // 2, kw // 2
    out = np.zeros(h * w)
    for ky in range(kh):
        for kx in range(kw):
            c = kernel[ky, kx]
            if c == 0.0:
                continue
            iy = np.clip(np.arange(h) + (ky - ry), 0, h - 1)
            ix = np.clip(np.arange(w) + (kx - rx), 0, w - 1)
            lin = (iy[:, None] * w + ix[None, :]).ravel()
            out += np.bincount(lin, weights=(c * g).ravel(), minlength=h * w)
    return out.reshape(h, w)


def convolve_replicate(a: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """True convolution (kernel flipped) with replicate boundary."""
    return correlate_replicate(a, kernel[::-1, ::-1])


def convolve_replicate_adjoint(g: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Exact adjoint of convolve_replicate in its image argument."""
    return correlate_replicate_adjoint(g, kernel[::-1, ::-1])


LUMA_WEIGHTS = (0.299, 0.587, 0.114)


def luma(c: ColorImage) -> ImageGrid:
    """Fixed-weight grayscale projection 0.299 R + 0.587 G + 0.114 B."""
    wr, wg, wb = LUMA_WEIGHTS
    return c.r.like(wr * c.r.data + wg * c.g.data + wb * c.b.data)
