"""Training-data preparation and unrolled gradient training of sequence models.

Targets come from a reference run at higher spatial resolution and finer time
step, subsampled temporally (every Mth frame) and downscaled spatially with
area averaging. Training unrolls the Euler sequence model over the window and
backpropagates through every step with the selection maps held fixed exactly
as recorded during the forward pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import FrameSequence, ImageGrid, InstabilityError, downscale_area
from .integrate import SequenceModel
from .net import FilterBank
from .refsolve import SchemeConfig, run_reference


@dataclass
class TrainingWindow:
    """One input frame followed by the target frames it must predict."""

    u0: ImageGrid
    targets: list
    dt: float

    def __post_init__(self):
        if not self.targets:
            raise ValueError("window needs at least one target frame")
        for t in self.targets:
            if t.shape != self.u0.shape:
                raise ValueError("window frames must share dimensions")
        if self.dt <= 0:
            raise ValueError("dt must be positive")


@dataclass
class TrainConfig:
    """Defaults encode the shipped recipe: closed-form single-step fit, then
    a gentle unrolled polish. From-scratch descent (ls_init=False) wants a
    much larger rate (~1e-3) and many more iterations.
    """

    unroll_steps: int = 10
    lr: float = 1e-5
    lr_final: float | None = None   # linear decay target; None keeps lr constant
    iterations: int = 200
    batch_size: int = 8
    seed: int = 0
    spatial_factor: int = 4
    temporal_factor: int = 10
    ls_init: bool = True            # closed-form single-step fit before descent
    ls_ridge: float = 1e-6

    def __post_init__(self):
        if self.unroll_steps < 1:
            raise ValueError("unroll_steps must be >= 1")
        if self.spatial_factor < 1 or self.temporal_factor < 1:
            raise ValueError("factors must be >= 1")


def make_target_sequence(u0_hr: ImageGrid, cfg: SchemeConfig, train_cfg: TrainConfig,
                         steps_hr: int, guard="default") -> FrameSequence:
    """Reference run at fine resolution, coarsened in time and space."""
    f = train_cfg.spatial_factor
    m = train_cfg.temporal_factor
    if u0_hr.height % f or u0_hr.width % f:
        raise ValueError(f"input dimensions must be divisible by spatial factor {f}")
    if steps_hr % m:
        raise ValueError(f"steps_hr must be divisible by temporal factor {m}")
    fine = run_reference(u0_hr, cfg, steps_hr, guard=guard)
    frames = [downscale_area(fine[k], f) if f > 1 else fine[k]
              for k in range(0, steps_hr + 1, m)]
    return FrameSequence(frames, cfg.dt * m)


def windows_from_sequence(seq: FrameSequence, unroll_steps: int = 10,
                          stride: int = 1) -> list:
    """Sliding windows of unroll_steps + 1 consecutive frames."""
    out = []
    for start in range(0, len(seq) - unroll_steps, stride):
        out.append(TrainingWindow(
            u0=seq[start],
            targets=[seq[start + 1 + k] for k in range(unroll_steps)],
            dt=seq.dt,
        ))
    return out


def unrolled_forward(model: SequenceModel, w: TrainingWindow):
    """Euler-unroll the window input; returns states, records, and the loss."""
    est = model.estimator
    states = [w.u0]
    records = []
    loss = 0.0
    u = w.u0
    for k, target in enumerate(w.targets):
        d, rec = est.derivative_recorded(u)
        u = u.like(u.data + model.dt * d.data)
        if not np.all(np.isfinite(u.data)):
            raise InstabilityError(k + 1, f"non-finite state at unroll step {k + 1}")
        states.append(u)
        records.append(rec)
        loss += float(np.sum((u.data - target.data) ** 2))
    return states, records, loss


def unrolled_loss(model: SequenceModel, w: TrainingWindow) -> float:
    """Summed squared error of the unrolled predictions against the targets."""
    return unrolled_forward(model, w)[2]


def unrolled_gradient(model: SequenceModel, w: TrainingWindow):
    """Loss and tap gradients through the whole unrolled chain.

    Reverse accumulation: at each step the skip connection passes the
    incoming gradient through unchanged and the estimator adds dt times its
    input gradient; selection maps are the ones recorded going forward.
    """
    est = model.estimator
    states, records, loss = unrolled_forward(model, w)
    n = len(w.targets)
    grads = [np.zeros_like(t) for t in est.tap_arrays()]
    lam = 2.0 * (states[n].data - w.targets[n - 1].data)
    for k in range(n - 1, -1, -1):
        dtaps, dz = est.backward(states[k], records[k], states[k].like(lam))
        for g, dt_k in zip(grads, dtaps):
            g += model.dt * dt_k
        lam = lam + model.dt * dz.data
        if k >= 1:
            lam = lam + 2.0 * (states[k].data - w.targets[k - 1].data)
    return loss, grads


def _patch_matrix(u: ImageGrid, bank: FilterBank) -> np.ndarray:
    fp = bank.footprint
    h, w = u.shape
    ry, rx = fp.height // 2, fp.width // 2
    pad = np.pad(u.data, ((ry,), (rx,)), mode="edge")
    cols = [pad[ry + dy: ry + dy + h, rx + dx: rx + dx + w].ravel()
            for dy, dx in fp.offsets()]
    return np.stack(cols, axis=1)


def least_squares_fit(bank: FilterBank, windows: list, ridge: float = 1e-6) -> FilterBank:
    """Closed-form single-step fit: each filter solves its own normal equations.

    Teacher forcing: every consecutive target pair (u_k, u_{k+1}) contributes
    samples relating the patch around each pixel of u_k to the residual
    (u_{k+1} - u_k) / dt, bucketed by the selection at u_k.
    """
    from .features import select_map

    k_filters = bank.num_filters
    area = bank.footprint.area
    ata = np.zeros((k_filters, area, area))
    atb = np.zeros((k_filters, area))
    for w in windows:
        frames = [w.u0] + list(w.targets)
        for a, b in zip(frames[:-1], frames[1:]):
            sel = select_map(a, bank.selection).ravel()
            patches = _patch_matrix(a, bank)
            resid = ((b.data - a.data) / w.dt).ravel()
            order = np.argsort(sel, kind="stable")
            sel_sorted = sel[order]
            bounds = np.searchsorted(sel_sorted, np.arange(k_filters + 1))
            for k in range(k_filters):
                rows = order[bounds[k]:bounds[k + 1]]
                if rows.size == 0:
                    continue
                p = patches[rows]
                ata[k] += p.T @ p
                atb[k] += p.T @ resid[rows]
    taps = np.zeros((k_filters, area))
    eye = np.eye(area)
    for k in range(k_filters):
        scale = max(np.trace(ata[k]) / area, 1.0)
        taps[k] = np.linalg.solve(ata[k] + ridge * scale * eye, atb[k])
    return FilterBank(taps, bank.footprint, bank.selection)


class _Adam:
    def __init__(self, params: list, lr: float):
        self.params = params
        self.lr = lr
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0
        self.beta1, self.beta2, self.eps = 0.9, 0.999, 1e-8

    def step(self, grads: list, lr: float | None = None) -> None:
        self.t += 1
        lr = self.lr if lr is None else lr
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            mhat = m / (1 - self.beta1 ** self.t)
            vhat = v / (1 - self.beta2 ** self.t)
            p -= lr * mhat / (np.sqrt(vhat) + self.eps)


def train_model(dataset: list, cfg: TrainConfig, model: SequenceModel):
    """Mini-batch Adam on the mean window loss; deterministic given the seed.

    Returns the trained model (taps updated in place) and the loss curve as a
    list of (iteration, mean batch loss) pairs.
    """
    if not dataset:
        raise ValueError("training dataset is empty")
    rng = np.random.default_rng(cfg.seed)
    params = model.estimator.tap_arrays()
    opt = _Adam(params, cfg.lr)
    losses = []
    npix = dataset[0].u0.data.size
    for it in range(cfg.iterations):
        idx = rng.integers(0, len(dataset), size=min(cfg.batch_size, len(dataset)))
        total = [np.zeros_like(p) for p in params]
        batch_loss = 0.0
        for i in idx:
            loss, grads = unrolled_gradient(model, dataset[i])
            batch_loss += loss
            for t, g in zip(total, grads):
                t += g
        batch_loss /= len(idx)
        if not np.isfinite(batch_loss):
            raise InstabilityError(it, f"training loss diverged at iteration {it}")
        # Normalize by batch and pixel count so lr is resolution independent.
        scale = 1.0 / (len(idx) * npix)
        lr = cfg.lr
        if cfg.lr_final is not None and cfg.iterations > 1:
            lr = cfg.lr + (cfg.lr_final - cfg.lr) * it / (cfg.iterations - 1)
        opt.step([t * scale for t in total], lr=lr)
        losses.append((it, batch_loss))
    return model, losses


def train(dataset: list, cfg: TrainConfig, init: FilterBank):
    """Train a plain filter bank; returns (bank, loss curve).

    With cfg.ls_init the bank starts from the closed-form single-step fit and
    Adam then minimizes the unrolled loss.
    """
    bank = init.copy()
    if cfg.ls_init:
        bank = least_squares_fit(bank, dataset, ridge=cfg.ls_ridge)
    dt = dataset[0].dt if dataset else 1.0
    model = SequenceModel.from_bank(bank, dt=dt)
    if cfg.iterations > 0:
        model, losses = train_model(dataset, cfg, model)
    else:
        losses = []
    return model.estimator.bank, losses


def save_loss_csv(losses: list, path: str) -> None:
    with open(path, "w") as f:
        f.write("iteration,loss\n")
        for it, loss in losses:
            f.write(f"{it},{loss!r}\n")
