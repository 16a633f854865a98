"""Time integration of learned time-derivative estimators.

A sequence model advances an image with explicit Euler or midpoint steps of
either a plain filter-bank estimator or a conservative flux pair. The flux
variant differences per-edge flux estimates with zero flux through the outer
boundary, so its evolution conserves the discrete mean exactly regardless of
filter contents.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import select_map
from .grid import FrameSequence, ImageGrid, InstabilityError
from .net import FilterBank, blade_apply, blade_backward, select_and_apply
from .refsolve import RangeGuard


def _flux_divergence(gx_raw: np.ndarray, gy_raw: np.ndarray) -> np.ndarray:
    """Signed sum of edge fluxes; boundary fluxes are forced to zero first."""
    gx = gx_raw.copy()
    gy = gy_raw.copy()
    gx[:, -1] = 0.0  # right edge of the last column is the image boundary
    gy[-1, :] = 0.0
    d = gx + gy
    d[:, 1:] -= gx[:, :-1]
    d[1:, :] -= gy[:-1, :]
    return d


def flux_time_derivative(bank_x: FilterBank, bank_y: FilterBank, u: ImageGrid) -> ImageGrid:
    """Finite-volume time derivative from per-edge flux estimates.

    bank_x's output at (m, n) is the flux across the edge between (m, n) and
    (m+1, n); bank_y's across the edge to (m, n+1). The result sums to zero
    exactly by telescoping.
    """
    gx = select_and_apply(bank_x, u).data
    gy = select_and_apply(bank_y, u).data
    return u.like(_flux_divergence(gx, gy))


class PlainEstimator:
    """Time-derivative estimate from a single filter bank."""

    def __init__(self, bank: FilterBank):
        self.bank = bank

    def derivative(self, u: ImageGrid) -> ImageGrid:
        return select_and_apply(self.bank, u)

    def derivative_recorded(self, u: ImageGrid):
        sel = select_map(u, self.bank.selection)
        return blade_apply(self.bank, sel, u), (sel,)

    def backward(self, u: ImageGrid, record, g: ImageGrid):
        """Gradients of <g, derivative(u)> w.r.t. taps and u, selection frozen."""
        (sel,) = record
        dtaps, dz = blade_backward(self.bank, sel, u, g)
        return [dtaps], dz

    def tap_arrays(self):
        return [self.bank.taps]


class FluxEstimator:
    """Conservative time derivative from an (x, y) flux bank pair."""

    def __init__(self, bank_x: FilterBank, bank_y: FilterBank):
        self.bank_x = bank_x
        self.bank_y = bank_y

    def derivative(self, u: ImageGrid) -> ImageGrid:
        return flux_time_derivative(self.bank_x, self.bank_y, u)

    def derivative_recorded(self, u: ImageGrid):
        sx = select_map(u, self.bank_x.selection)
        sy = select_map(u, self.bank_y.selection)
        gx = blade_apply(self.bank_x, sx, u).data
        gy = blade_apply(self.bank_y, sy, u).data
        return u.like(_flux_divergence(gx, gy)), (sx, sy)

    def backward(self, u: ImageGrid, record, g: ImageGrid):
        sx, sy = record
        lam = g.data
        # Adjoint of the flux differencing: dG[m] = lam[m] - lam[m+1],
        # then zero the rows/columns whose forward flux was forced to zero.
        dgx = lam.copy()
        dgx[:, :-1] -= lam[:, 1:]
        dgx[:, -1] = 0.0
        dgy = lam.copy()
        dgy[:-1, :] -= lam[1:, :]
        dgy[-1, :] = 0.0
        dtx, dzx = blade_backward(self.bank_x, sx, u, u.like(dgx))
        dty, dzy = blade_backward(self.bank_y, sy, u, u.like(dgy))
        return [dtx, dty], u.like(dzx.data + dzy.data)

    def tap_arrays(self):
        return [self.bank_x.taps, self.bank_y.taps]


@dataclass
class SequenceModel:
    """Estimator plus integrator plus time step."""

    estimator: object
    integrator: str = "euler"
    dt: float = 1.0

    def __post_init__(self):
        if self.integrator not in ("euler", "midpoint"):
            raise ValueError("integrator must be 'euler' or 'midpoint'")
        if self.dt <= 0:
            raise ValueError("dt must be positive")

    @classmethod
    def from_bank(cls, bank: FilterBank, dt: float = 1.0, integrator: str = "euler"):
        return cls(PlainEstimator(bank), integrator, dt)

    @classmethod
    def from_flux_banks(cls, bank_x: FilterBank, bank_y: FilterBank,
                        dt: float = 1.0, integrator: str = "euler"):
        return cls(FluxEstimator(bank_x, bank_y), integrator, dt)


def euler_step(model: SequenceModel, u: ImageGrid) -> ImageGrid:
    """u + dt * estimate(u); the selection is recomputed from u."""
    return u.like(u.data + model.dt * model.estimator.derivative(u).data)


def midpoint_step(model: SequenceModel, u: ImageGrid) -> ImageGrid:
    """Explicit midpoint: two estimator evaluations per step."""
    half = u.like(u.data + 0.5 * model.dt * model.estimator.derivative(u).data)
    return u.like(u.data + model.dt * model.estimator.derivative(half).data)


def model_step(model: SequenceModel, u: ImageGrid) -> ImageGrid:
    return (euler_step if model.integrator == "euler" else midpoint_step)(model, u)


def evolve(model: SequenceModel, u0: ImageGrid, steps: int,
           guard: RangeGuard | None | str = "default") -> FrameSequence:
    """Repeated stepping with frame recording and instability detection."""
    if steps < 0:
        raise ValueError("steps must be non-negative")
    if guard == "default":
        guard = RangeGuard.from_initial(u0)
    frames = [u0.copy()]
    u = u0
    for k in range(1, steps + 1):
        u = model_step(model, u)
        if guard is not None:
            guard.check(u.data, k)
        elif not np.all(np.isfinite(u.data)):
            raise InstabilityError(k, f"non-finite sample at step {k}")
        frames.append(u)
    return FrameSequence(frames, model.dt)
