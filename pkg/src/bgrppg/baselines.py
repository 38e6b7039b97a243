"""Classical chrominance baselines (CHROM, POS) on region-mean RGB traces."""

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSignalError, InputError, InputTooShortError
from .spectral import HR_HI_HZ, HR_LO_HZ
from .stmap import yuv_to_rgb


@dataclass
class RgbTrace:
    r: np.ndarray
    g: np.ndarray
    b: np.ndarray
    fs: float = 25.0

    def __post_init__(self):
        self.r, self.g, self.b = (np.asarray(c, dtype=np.float64) for c in (self.r, self.g, self.b))
        if not (self.r.shape == self.g.shape == self.b.shape) or self.r.ndim != 1:
            raise InputError("r, g, b must be equal-length 1-D sequences")
        if min(self.r.mean(), self.g.mean(), self.b.mean()) <= 0:
            raise InputError("channel means must be strictly positive")

    def stack(self):
        return np.stack([self.r, self.g, self.b], axis=1)  # (T, 3)

    @classmethod
    def from_face_map(cls, face_map, regions=None):
        """Average the raw YUV face map over regions and convert back to RGB."""
        yuv = face_map.data[:3]
        if regions is not None:
            yuv = yuv[:, regions]
        rgb = yuv_to_rgb(yuv.mean(axis=1).T)
        return cls(rgb[:, 0], rgb[:, 1], rgb[:, 2], face_map.fs)


def bandpass_fft(x, fs, lo=HR_LO_HZ, hi=HR_HI_HZ):
    """Zero every FFT bin outside [lo, hi] Hz."""
    spec = np.fft.rfft(x)
    f = np.fft.rfftfreq(len(x), 1.0 / fs)
    spec[(f < lo) | (f > hi)] = 0.0
    return np.fft.irfft(spec, len(x))


def chrom(trace):
    rgb = trace.stack()
    n = rgb / rgb.mean(axis=0)
    x = 3.0 * n[:, 0] - 2.0 * n[:, 1]
    y = 1.5 * n[:, 0] + n[:, 1] - 1.5 * n[:, 2]
    xf = bandpass_fft(x, trace.fs)
    yf = bandpass_fft(y, trace.fs)
    sy = yf.std()
    if sy < 1e-12:
        raise DegenerateSignalError("chrominance Y component has zero variance")
    return xf - (xf.std() / sy) * yf


def pos(trace, window_s=1.6):
    rgb = trace.stack()
    t = len(rgb)
    win = int(round(window_s * trace.fs))
    if t < win:
        raise InputTooShortError(f"trace length {t} < POS window {win}")
    proj = np.array([[0.0, 1.0, -1.0], [-2.0, 1.0, 1.0]])
    h = np.zeros(t)
    for m in range(t - win + 1):
        c = rgb[m:m + win]
        cn = c / c.mean(axis=0)
        s = cn @ proj.T
        s1, s2 = s[:, 0], s[:, 1]
        sd2 = s2.std()
        seg = s1 + (s1.std() / sd2) * s2 if sd2 > 1e-12 else s1
        h[m:m + win] += seg - seg.mean()
    return h
