"""Sliding-window min-max enhancement of face STMaps.

Each region trace is cut into consecutive windows of ``s_norm`` frames
starting at some offset and min-max normalised per window. Averaging the
result over several offsets smooths the discontinuities at window edges.
The enhanced channels are scaled to [0, 255] and stacked after the raw
channels.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, InputTooShortError
from .stmap import StMap

DEFAULT_S_NORM = 100
DEFAULT_N = 4


def default_offsets(s_norm, n):
    step = s_norm // n
    return [i * step for i in range(n)]


@dataclass
class BioseConfig:
    s_norm: int = DEFAULT_S_NORM
    n: int = DEFAULT_N
    offsets: list = field(default=None)

    def __post_init__(self):
        if self.s_norm < 1:
            raise InputError("s_norm must be positive")
        if not 1 <= self.n <= self.s_norm:
            raise InputError(f"N must lie in [1, s_norm], got {self.n}")
        if self.offsets is None:
            self.offsets = default_offsets(self.s_norm, self.n)
        self.offsets = [int(o) for o in self.offsets]
        if len(self.offsets) != self.n:
            raise InputError("need exactly N offsets")
        if any(b <= a for a, b in zip(self.offsets, self.offsets[1:])):
            raise InputError("offsets must be strictly increasing")
        if self.offsets[0] < 0 or self.offsets[-1] >= self.s_norm:
            raise InputError("offsets must lie in [0, s_norm)")


def window_bounds(length, s_norm, offset):
    """Half-open ``(start, stop)`` windows covering ``[0, length)``.

    A head window ``[0, offset)`` precedes the first full window when the
    offset is non-zero; the tail window may be shorter than ``s_norm``.
    """
    bounds = []
    if offset > 0:
        bounds.append((0, min(offset, length)))
    start = offset
    while start < length:
        bounds.append((start, min(start + s_norm, length)))
        start += s_norm
    return bounds


def biose_window(trace, cfg, offset):
    """Min-max normalise ``trace`` within each window; flat windows map to 0.5."""
    v = np.asarray(trace, dtype=np.float64)
    if v.ndim != 1:
        raise InputError("trace must be one-dimensional")
    if len(v) < cfg.s_norm:
        raise InputTooShortError(f"trace length {len(v)} < s_norm {cfg.s_norm}")
    out = np.empty_like(v)
    for a, b in window_bounds(len(v), cfg.s_norm, offset):
        seg = v[a:b]
        lo, hi = seg.min(), seg.max()
        out[a:b] = 0.5 if hi == lo else (seg - lo) / (hi - lo)
    return out


def _enhance_rows(rows, cfg):
    # rows: (R, T); vectorised over rows, looped over windows
    acc = np.zeros_like(rows)
    for offset in cfg.offsets:
        for a, b in window_bounds(rows.shape[1], cfg.s_norm, offset):
            seg = rows[:, a:b]
            lo = seg.min(axis=1, keepdims=True)
            span = seg.max(axis=1, keepdims=True) - lo
            flat = span == 0
            acc[:, a:b] += np.where(flat, 0.5, (seg - lo) / np.where(flat, 1.0, span))
    return acc * (255.0 / cfg.n)


def enhance_channels(data, cfg):
    """Enhanced channels only, for a ``C x L x T`` array."""
    data = np.asarray(data, dtype=np.float64)
    c, l, t = data.shape
    if t < cfg.s_norm:
        raise InputTooShortError(f"map length {t} < s_norm {cfg.s_norm}")
    return _enhance_rows(data.reshape(c * l, t), cfg).reshape(c, l, t)


def biose_enhance(face_map, cfg=None):
    """Raw face map (3 x L x T) -> raw channels followed by enhanced channels."""
    cfg = cfg or BioseConfig()
    if face_map.data.shape[0] != 3:
        raise InputError(f"expected a 3-channel raw map, got {face_map.data.shape}")
    enhanced = enhance_channels(face_map.data, cfg)
    return StMap(np.concatenate([face_map.data, enhanced], axis=0),
                 "enhanced-concat", face_map.fs)


def boundary_jump(enhanced_row, cfg):
    """Largest absolute step of ``enhanced_row`` across any window edge of ``cfg``."""
    e = np.asarray(enhanced_row, dtype=np.float64)
    edges = sorted({a for off in cfg.offsets
                    for a, _ in window_bounds(len(e), cfg.s_norm, off) if a > 0})
    if not edges:
        return 0.0
    idx = np.asarray(edges)
    return float(np.max(np.abs(e[idx] - e[idx - 1])))
