"""Structure-tensor features and their quantization into a per-pixel filter index.

The selection index is a mixed-radix flattening of quantized orientation,
strength, coherence, and optionally intensity: orientation varies fastest,
intensity (when present) slowest.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import ImageGrid, gaussian_smooth_array, shift_extended

# A SelectionMap is a plain int array of per-pixel filter indices.
SelectionMap = np.ndarray


@dataclass
class TensorField:
    """Per-pixel symmetric 2x2 matrices (jxx, jxy, jyy)."""

    jxx: np.ndarray
    jxy: np.ndarray
    jyy: np.ndarray


@dataclass
class FeatureField:
    """Per-pixel orientation in [0, pi), strength sqrt(l1), coherence in [0, 1]."""

    orientation: np.ndarray
    strength: np.ndarray
    coherence: np.ndarray


@dataclass(frozen=True)
class SelectionConfig:
    """Feature quantization that defines the filter selection rule.

    A feature with an empty threshold tuple has a single bin, which removes it
    from the index; intensity_thresholds=None disables the intensity feature
    entirely. Thresholds must be ascending.
    """

    orientation_bins: int = 24
    strength_thresholds: tuple = ()
    coherence_thresholds: tuple = ()
    intensity_thresholds: tuple | None = None
    rho: float = 1.0

    def __post_init__(self):
        if self.orientation_bins < 1:
            raise ValueError("orientation_bins must be >= 1")
        if self.rho < 0:
            raise ValueError("rho must be non-negative")
        for name in ("strength_thresholds", "coherence_thresholds", "intensity_thresholds"):
            t = getattr(self, name)
            if t is None:
                continue
            object.__setattr__(self, name, tuple(float(v) for v in t))
            t = getattr(self, name)
            if any(t[i] > t[i + 1] for i in range(len(t) - 1)):
                raise ValueError(f"{name} must be ascending")

    @property
    def strength_bins(self) -> int:
        return len(self.strength_thresholds) + 1

    @property
    def coherence_bins(self) -> int:
        return len(self.coherence_thresholds) + 1

    @property
    def intensity_bins(self) -> int:
        return 1 if self.intensity_thresholds is None else len(self.intensity_thresholds) + 1

    @property
    def num_filters(self) -> int:
        return (self.orientation_bins * self.strength_bins
                * self.coherence_bins * self.intensity_bins)

    @property
    def uses_intensity(self) -> bool:
        return self.intensity_thresholds is not None


def central_gradient(img: ImageGrid) -> tuple[np.ndarray, np.ndarray]:
    """Central differences with replicate boundary, divided by 2 dx."""
    a = img.data
    gx = (shift_extended(a, 0, 1) - shift_extended(a, 0, -1)) / (2.0 * img.dx)
    gy = (shift_extended(a, 1, 0) - shift_extended(a, -1, 0)) / (2.0 * img.dx)
    return gx, gy


def structure_tensor(img: ImageGrid, rho: float) -> TensorField:
    """Outer product of the central-difference gradient, smoothed by G_rho."""
    if rho < 0:
        raise ValueError("rho must be non-negative")
    gx, gy = central_gradient(img)
    return TensorField(
        jxx=gaussian_smooth_array(gx * gx, rho),
        jxy=gaussian_smooth_array(gx * gy, rho),
        jyy=gaussian_smooth_array(gy * gy, rho),
    )


def tensor_eigen(t: TensorField) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Closed-form eigenvalues l1 >= l2 >= 0 and dominant-eigenvector angle.

    Roundoff can push eigenvalues slightly negative; they are clamped to 0.
    The angle is folded into [0, pi); a zero tensor gets angle 0.
    """
    half_tr = 0.5 * (t.jxx + t.jyy)
    disc = np.sqrt((0.5 * (t.jxx - t.jyy)) ** 2 + t.jxy ** 2)
    l1 = np.maximum(half_tr + disc, 0.0)
    l2 = np.maximum(half_tr - disc, 0.0)
    theta = 0.5 * np.arctan2(2.0 * t.jxy, t.jxx - t.jyy)
    theta = np.mod(theta, np.pi)
    # atan2(0, 0) = 0 keeps the degenerate case at the canonical angle.
    return l1, l2, theta


def eigen_features(t: TensorField) -> FeatureField:
    """Orientation/strength/coherence of each tensor; 0/0 coherence is 0."""
    l1, l2, theta = tensor_eigen(t)
    s1 = np.sqrt(l1)
    s2 = np.sqrt(l2)
    denom = s1 + s2
    coherence = np.divide(s1 - s2, denom, out=np.zeros_like(denom), where=denom > 0)
    return FeatureField(orientation=theta, strength=s1, coherence=coherence)


def _orientation_bins(theta: np.ndarray, nbins: int) -> np.ndarray:
    # Nearest bin center k*pi/B with wraparound; exact midpoints go to the
    # lower index, hence ceil(x - 1/2) rather than floor(x + 1/2).
    x = theta * (nbins / np.pi)
    return np.ceil(x - 0.5).astype(np.int64) % nbins


def _threshold_bins(values: np.ndarray, thresholds: tuple) -> np.ndarray:
    if not thresholds:
        return np.zeros(values.shape, dtype=np.int64)
    # Bin index = number of thresholds strictly below the value.
    return np.searchsorted(np.asarray(thresholds), values, side="left").astype(np.int64)


def quantize(features: FeatureField, cfg: SelectionConfig,
             intensity: ImageGrid | None = None) -> SelectionMap:
    """Flatten quantized features to a filter index per pixel."""
    ori = _orientation_bins(features.orientation, cfg.orientation_bins)
    str_bin = _threshold_bins(features.strength, cfg.strength_thresholds)
    coh_bin = _threshold_bins(features.coherence, cfg.coherence_thresholds)
    idx = ori + cfg.orientation_bins * (str_bin + cfg.strength_bins * coh_bin)
    if cfg.uses_intensity:
        if intensity is None:
            raise ValueError("selection config uses intensity but none was supplied")
        if intensity.shape != features.strength.shape:
            raise ValueError("intensity image does not match feature field dimensions")
        int_bin = _threshold_bins(intensity.data, cfg.intensity_thresholds)
        idx = idx + (cfg.orientation_bins * cfg.strength_bins * cfg.coherence_bins) * int_bin
    elif intensity is not None and intensity.shape != features.strength.shape:
        raise ValueError("intensity image does not match feature field dimensions")
    return idx


def select_map(img: ImageGrid, cfg: SelectionConfig,
               intensity: ImageGrid | None = None) -> SelectionMap:
    """Structure tensor -> eigen features -> quantize, in one call.

    When the config uses intensity and no auxiliary image is given, the input
    itself provides the intensity feature.
    """
    feats = eigen_features(structure_tensor(img, cfg.rho))
    if cfg.uses_intensity and intensity is None:
        intensity = img
    return quantize(feats, cfg, intensity)


def _quantile_thresholds(pool: np.ndarray, count: int) -> tuple:
    if count == 0:
        return ()
    qs = np.arange(1, count + 1) / (count + 1)
    return tuple(float(v) for v in np.quantile(pool, qs))


def calibrate_thresholds(images: list, cfg: SelectionConfig) -> SelectionConfig:
    """Equal-population thresholds from the pooled feature distribution.

    Threshold counts are taken from ``cfg``; only the values are replaced.
    """
    if not images:
        raise ValueError("calibration needs at least one image")
    strengths, coherences, intensities = [], [], []
    for img in images:
        feats = eigen_features(structure_tensor(img, cfg.rho))
        strengths.append(feats.strength.ravel())
        coherences.append(feats.coherence.ravel())
        if cfg.uses_intensity:
            intensities.append(img.data.ravel())
    new_intensity = cfg.intensity_thresholds
    if cfg.uses_intensity:
        new_intensity = _quantile_thresholds(
            np.concatenate(intensities), len(cfg.intensity_thresholds))
    return SelectionConfig(
        orientation_bins=cfg.orientation_bins,
        strength_thresholds=_quantile_thresholds(
            np.concatenate(strengths), len(cfg.strength_thresholds)),
        coherence_thresholds=_quantile_thresholds(
            np.concatenate(coherences), len(cfg.coherence_thresholds)),
        intensity_thresholds=new_intensity,
        rho=cfg.rho,
    )
