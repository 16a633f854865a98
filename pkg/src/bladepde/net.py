"""Spatially-varying filter bank: storage, forward filtering, analytic adjoint.

Each output pixel is the dot product of one selected filter with the input
patch around it (replicate boundary). Inference cost is independent of the
number of filters: the forward pass is a fixed set of shifted gathers, one per
footprint tap.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .features import SelectionConfig, SelectionMap, select_map
from .grid import ImageGrid


@dataclass(frozen=True)
class Footprint:
    """Odd filter footprint centered on the output pixel."""

    width: int = 5
    height: int = 5

    def __post_init__(self):
        if self.width < 1 or self.height < 1 or self.width % 2 == 0 or self.height % 2 == 0:
            raise ValueError("footprint dimensions must be odd and positive")

    @property
    def area(self) -> int:
        return self.width * self.height

    def offsets(self):
        """(dy, dx) offsets in tap order: row major over the footprint."""
        ry, rx = self.height // 2, self.width // 2
        for dy in range(-ry, ry + 1):
            for dx in range(-rx, rx + 1):
                yield dy, dx


@dataclass
class FilterBank:
    """Learnable filters plus the selection rule that dispatches them.

    Taps are stored filter major, row major within the footprint, so tap j of
    filter k is ``taps[k, j]``.
    """

    taps: np.ndarray
    footprint: Footprint = field(default_factory=Footprint)
    selection: SelectionConfig = field(default_factory=SelectionConfig)

    def __post_init__(self):
        self.taps = np.ascontiguousarray(self.taps, dtype=np.float64)
        if self.taps.ndim != 2 or self.taps.shape[1] != self.footprint.area:
            raise ValueError(
                f"taps must be (num_filters, {self.footprint.area}), got {self.taps.shape}")
        if self.taps.shape[0] != self.selection.num_filters:
            raise ValueError(
                f"{self.taps.shape[0]} filters but selection defines {self.selection.num_filters} bins")
        if not np.all(np.isfinite(self.taps)):
            raise ValueError("taps must be finite")

    @property
    def num_filters(self) -> int:
        return self.taps.shape[0]

    @classmethod
    def zeros(cls, selection: SelectionConfig, footprint: Footprint | None = None) -> "FilterBank":
        fp = footprint or Footprint()
        return cls(np.zeros((selection.num_filters, fp.area)), fp, selection)

    def copy(self) -> "FilterBank":
        return FilterBank(self.taps.copy(), self.footprint, self.selection)


def _check_selection(bank: FilterBank, sel: SelectionMap, z: ImageGrid) -> None:
    if sel.shape != z.shape:
        raise ValueError(f"selection map shape {sel.shape} does not match image {z.shape}")
    if sel.min() < 0 or sel.max() >= bank.num_filters:
        raise ValueError("selection index out of range for the filter bank")


def _padded(z: ImageGrid, fp: Footprint) -> np.ndarray:
    return np.pad(z.data, ((fp.height // 2,), (fp.width // 2,)), mode="edge")


def blade_apply(bank: FilterBank, sel: SelectionMap, z: ImageGrid) -> ImageGrid:
    """Apply the per-pixel selected filter: u_i = sum_j h^{s(i)}_j z_{i+j}."""
    _check_selection(bank, sel, z)
    fp = bank.footprint
    h, w = z.shape
    ry, rx = fp.height // 2, fp.width // 2
    pad = _padded(z, fp)
    out = np.zeros((h, w))
    for j, (dy, dx) in enumerate(fp.offsets()):
        window = pad[ry + dy: ry + dy + h, rx + dx: rx + dx + w]
        out += bank.taps[sel, j] * window
    return z.like(out)


def blade_backward(bank: FilterBank, sel: SelectionMap, z: ImageGrid,
                   dL_du: ImageGrid) -> tuple[np.ndarray, ImageGrid]:
    """Exact adjoint of blade_apply with the selection held fixed.

    Returns (dL/dtaps, dL/dz). Tap gradients gather z against the output
    gradient per selection bucket; input gradients scatter through the same
    replicate extension the forward pass read through, so border contributions
    accumulate into the clamped edge pixels. Accumulation order is fixed, so
    results are bit-reproducible.
    """
    _check_selection(bank, sel, z)
    if dL_du.shape != z.shape:
        raise ValueError("output gradient dimensions do not match the input")
    fp = bank.footprint
    h, w = z.shape
    ry, rx = fp.height // 2, fp.width // 2
    pad = _padded(z, fp)
    g = dL_du.data
    sel_flat = sel.ravel()
    k = bank.num_filters
    dtaps = np.zeros_like(bank.taps)
    dz = np.zeros(h * w)
    for j, (dy, dx) in enumerate(fp.offsets()):
        window = pad[ry + dy: ry + dy + h, rx + dx: rx + dx + w]
        dtaps[:, j] = np.bincount(sel_flat, weights=(window * g).ravel(), minlength=k)
        # Forward read z[clip(n+dy), clip(m+dx)]; scatter into the same cells.
        iy = np.clip(np.arange(h) + dy, 0, h - 1)
        ix = np.clip(np.arange(w) + dx, 0, w - 1)
        lin = (iy[:, None] * w + ix[None, :]).ravel()
        dz += np.bincount(lin, weights=(bank.taps[sel, j] * g).ravel(), minlength=h * w)
    return dtaps, z.like(dz.reshape(h, w))


def select_and_apply(bank: FilterBank, z: ImageGrid,
                     aux_intensity: ImageGrid | None = None) -> ImageGrid:
    """Compute the selection map from z, then filter z with it."""
    sel = select_map(z, bank.selection, aux_intensity)
    return blade_apply(bank, sel, z)


def embed_footprint(bank: FilterBank, footprint: Footprint) -> FilterBank:
    """The same filters on a larger footprint (zero padding around each)."""
    old = bank.footprint
    if footprint.width < old.width or footprint.height < old.height:
        raise ValueError("target footprint must contain the current one")
    oy = (footprint.height - old.height) // 2
    ox = (footprint.width - old.width) // 2
    taps = np.zeros((bank.num_filters, footprint.height, footprint.width))
    taps[:, oy:oy + old.height, ox:ox + old.width] = \
        bank.taps.reshape(bank.num_filters, old.height, old.width)
    return FilterBank(taps.reshape(bank.num_filters, footprint.area), footprint, bank.selection)
