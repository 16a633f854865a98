"""Binary file formats: filter banks (BLADEFB1) and flow fields (BLFLOW01).

Everything is little-endian. Taps are stored as 32-bit reals, filter major,
row major within the footprint, so files round-trip bit-exactly.
"""

from __future__ import annotations

import struct

import numpy as np

from .apps import FlowField
from .features import SelectionConfig
from .net import FilterBank, Footprint

BANK_MAGIC = b"BLADEFB1"
BANK_VERSION = 1
FLOW_MAGIC = b"BLFLOW01"

_KIND_ORIENTATION = 0
_KIND_STRENGTH = 1
_KIND_COHERENCE = 2
_KIND_INTENSITY = 3


def _feature_records(cfg: SelectionConfig) -> list:
    records = [
        (_KIND_ORIENTATION, cfg.orientation_bins, ()),
        (_KIND_STRENGTH, cfg.strength_bins, cfg.strength_thresholds),
        (_KIND_COHERENCE, cfg.coherence_bins, cfg.coherence_thresholds),
    ]
    if cfg.uses_intensity:
        records.append((_KIND_INTENSITY, cfg.intensity_bins, cfg.intensity_thresholds))
    return records


def write_filter_bank(path: str, bank: FilterBank) -> None:
    cfg = bank.selection
    parts = [BANK_MAGIC, struct.pack("<I", BANK_VERSION)]
    parts.append(struct.pack("<II", bank.footprint.width, bank.footprint.height))
    records = _feature_records(cfg)
    parts.append(struct.pack("<I", len(records)))
    for kind, bins, thresholds in records:
        parts.append(struct.pack("<III", kind, bins, len(thresholds)))
        parts.append(struct.pack(f"<{len(thresholds)}d", *thresholds))
    parts.append(struct.pack("<d", cfg.rho))
    parts.append(struct.pack("<I", bank.num_filters))
    parts.append(bank.taps.astype("<f4").tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(parts))


def read_filter_bank(path: str) -> FilterBank:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:8] != BANK_MAGIC:
        raise ValueError(f"{path}: not a filter bank file (bad magic)")
    off = 8
    (version,) = struct.unpack_from("<I", raw, off); off += 4
    if version != BANK_VERSION:
        raise ValueError(f"{path}: unsupported filter bank version {version}")
    fw, fh = struct.unpack_from("<II", raw, off); off += 8
    (nfeat,) = struct.unpack_from("<I", raw, off); off += 4
    fields = {}
    order = []
    for _ in range(nfeat):
        kind, bins, nthr = struct.unpack_from("<III", raw, off); off += 12
        thr = struct.unpack_from(f"<{nthr}d", raw, off); off += 8 * nthr
        fields[kind] = (bins, tuple(thr))
        order.append(kind)
    if order[:3] != [_KIND_ORIENTATION, _KIND_STRENGTH, _KIND_COHERENCE]:
        raise ValueError(f"{path}: unexpected feature layout {order}")
    (rho,) = struct.unpack_from("<d", raw, off); off += 8
    (num_filters,) = struct.unpack_from("<I", raw, off); off += 4
    cfg = SelectionConfig(
        orientation_bins=fields[_KIND_ORIENTATION][0],
        strength_thresholds=fields[_KIND_STRENGTH][1],
        coherence_thresholds=fields[_KIND_COHERENCE][1],
        intensity_thresholds=fields[_KIND_INTENSITY][1] if _KIND_INTENSITY in fields else None,
        rho=rho,
    )
    fp = Footprint(fw, fh)
    expected = num_filters * fp.area * 4
    taps_raw = raw[off:off + expected]
    if len(taps_raw) != expected or len(raw) != off + expected:
        raise ValueError(f"{path}: truncated or oversized tap data")
    taps = np.frombuffer(taps_raw, dtype="<f4").astype(np.float64)
    return FilterBank(taps.reshape(num_filters, fp.area), fp, cfg)


def write_flow(path: str, flow: FlowField) -> None:
    h, w = flow.vx.shape
    with open(path, "wb") as f:
        f.write(FLOW_MAGIC)
        f.write(struct.pack("<II", w, h))
        f.write(flow.vx.astype("<f4").tobytes())
        f.write(flow.vy.astype("<f4").tobytes())


def read_flow(path: str) -> FlowField:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:8] != FLOW_MAGIC:
        raise ValueError(f"{path}: not a flow file (bad magic)")
    w, h = struct.unpack_from("<II", raw, 8)
    plane = h * w * 4
    if len(raw) != 16 + 2 * plane:
        raise ValueError(f"{path}: truncated flow data")
    vx = np.frombuffer(raw[16:16 + plane], dtype="<f4").astype(np.float64).reshape(h, w)
    vy = np.frombuffer(raw[16 + plane:], dtype="<f4").astype(np.float64).reshape(h, w)
    return FlowField(vx, vy)
