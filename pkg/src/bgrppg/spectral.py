"""Power spectral density, band-limited heart-rate estimation and metrics."""

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import InputError, NoPulseError, OutOfBandPeakError

NFFT = 2048
HR_LO_HZ = 0.66
HR_HI_HZ = 4.0
# Highest Hann sidelobe is about 7.1e-4 of its main-lobe power.
LEAKAGE_FLOOR = 1e-3


@dataclass(frozen=True)
class HrBand:
    lo: float = HR_LO_HZ
    hi: float = HR_HI_HZ

    def __post_init__(self):
        if not 0 < self.lo < self.hi:
            raise InputError(f"invalid band [{self.lo}, {self.hi}]")

    def clipped(self, fs):
        """The band restricted to below Nyquist."""
        return HrBand(self.lo, min(self.hi, fs / 2.0))


@dataclass
class PsdEstimate:
    freqs: np.ndarray
    power: np.ndarray
    fs: float
    nfft: int

    @property
    def df(self):
        return self.fs / self.nfft


def hann(n):
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def psd(trace, fs, nfft=NFFT):
    """Mean-removed, Hann-windowed, zero-padded periodogram.

    One-sided density scaled so that ``sum(power) * df`` equals the mean
    square of the windowed, mean-removed signal.
    """
    x = np.asarray(trace, dtype=np.float64)
    if x.ndim != 1 or len(x) < 64:
        raise InputError(f"psd needs a 1-D trace of length >= 64, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InputError("trace contains non-finite values")
    n = len(x)
    nfft = max(nfft, n)
    # An exactly constant trace has no power, whatever the rounding of its mean.
    xw = np.zeros(n) if np.all(x == x[0]) else (x - x.mean()) * hann(n)
    spec = np.abs(np.fft.rfft(xw, nfft)) ** 2 / (fs * n)
    spec[1:] *= 2.0
    if nfft % 2 == 0:
        spec[-1] /= 2.0
    return PsdEstimate(np.fft.rfftfreq(nfft, 1.0 / fs), spec, float(fs), nfft)


def estimate_hr(p, band=HrBand(), reject_edge=True):
    """Heart rate in bpm at the in-band PSD maximum (lowest frequency on ties).

    With ``reject_edge`` the in-band maximum is treated as leakage from
    outside the band, raising ``OutOfBandPeakError``, when it sits on a
    band edge while the spectrum keeps rising outside, or when it is
    weaker than a window sidelobe of the strongest out-of-band bin.
    """
    if band.hi > p.fs / 2.0:
        raise InputError(f"band upper edge {band.hi} Hz above Nyquist {p.fs / 2} Hz")
    idx = np.flatnonzero((p.freqs >= band.lo) & (p.freqs <= band.hi))
    inband = p.power[idx]
    if idx.size == 0 or not np.any(inband > 0):
        raise NoPulseError("no power inside the heart-rate band")
    k = int(np.argmax(inband))
    if reject_edge:
        j = idx[k]
        if k == 0 and j > 0 and p.power[j - 1] > p.power[j]:
            raise OutOfBandPeakError("spectral peak lies below the heart-rate band")
        if k == idx.size - 1 and j + 1 < p.power.size and p.power[j + 1] > p.power[j]:
            raise OutOfBandPeakError("spectral peak lies above the heart-rate band")
        outside = np.delete(p.power, idx)
        if outside.size and inband[k] < LEAKAGE_FLOOR * outside.max():
            raise OutOfBandPeakError("in-band power is only sidelobe leakage")
    return 60.0 * float(p.freqs[idx[k]])


def hr_from_trace(trace, fs, band=HrBand(), reject_edge=False):
    return estimate_hr(psd(trace, fs), band.clipped(fs), reject_edge=reject_edge)


@dataclass
class BvpTrace:
    samples: np.ndarray
    fs: float = 25.0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or not np.all(np.isfinite(self.samples)):
            raise InputError("BVP trace must be a finite 1-D sequence")

    def __len__(self):
        return len(self.samples)


@dataclass
class MetricsReport:
    mae: float
    rmse: float
    pearson_rho: float  # None when undefined
    n_clips: int
    rho_defined: bool = True

    def to_dict(self):
        return asdict(self)


def pearson(a, b):
    """Sample Pearson correlation, or ``None`` if either input is constant."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    da, db = a - a.mean(), b - b.mean()
    saa, sbb = float(np.dot(da, da)), float(np.dot(db, db))
    if saa == 0.0 or sbb == 0.0:
        return None
    return float(np.clip(np.dot(da, db) / math.sqrt(saa * sbb), -1.0, 1.0))


def metrics(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 1 or len(pred) < 2:
        raise InputError("pred and gt must be equal-length sequences of at least 2")
    err = pred - gt
    rho = pearson(pred, gt)
    return MetricsReport(
        mae=float(np.mean(np.abs(err))),
        rmse=float(np.sqrt(np.mean(err ** 2))),
        pearson_rho=rho,
        n_clips=int(len(pred)),
        rho_defined=rho is not None,
    )
