import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from bgrppg.errors import InputError, NoPulseError, OutOfBandPeakError
from bgrppg.spectral import (NFFT, HrBand, estimate_hr, hann, hr_from_trace, metrics, pearson,
                             psd)

FS = 25.0
T = np.arange(320) / FS
BIN_BPM = 60 * FS / NFFT


def sine(f, amp=1.0, phase=0.0):
    return amp * np.sin(2 * np.pi * f * T + phase)


def test_hann_is_periodic():
    w = hann(8)
    assert w[0] == 0 and np.isclose(w[4], 1.0)
    assert np.allclose(w[1:], w[1:][::-1])


def test_sine_peak_bin():
    p = psd(sine(1.2), FS)
    assert abs(p.freqs[np.argmax(p.power)] - 1.2) <= p.df


def test_parseval():
    rng = np.random.default_rng(0)
    x = rng.normal(size=320)
    p = psd(x, FS)
    xw = (x - x.mean()) * hann(320)
    assert np.isclose(p.power.sum() * p.df, np.mean(xw ** 2))


def test_constant_has_no_power():
    assert np.all(psd(np.full(320, 4.2), FS).power == 0)


def test_amplitude_ordering():
    p = psd(sine(0.9) + sine(1.5, 2.0), FS)
    i09 = np.argmin(abs(p.freqs - 0.9))
    i15 = np.argmin(abs(p.freqs - 1.5))
    assert p.power[i15 - 2:i15 + 3].max() > p.power[i09 - 2:i09 + 3].max()


def test_short_trace_rejected():
    with pytest.raises(InputError):
        psd(np.zeros(10), FS)


def test_hr_of_sine():
    assert abs(estimate_hr(psd(sine(1.2), FS)) - 72.0) <= BIN_BPM


def test_below_band_only():
    with pytest.raises((NoPulseError, OutOfBandPeakError)):
        estimate_hr(psd(sine(0.5), FS))


def test_band_masks_high_peak():
    assert abs(estimate_hr(psd(sine(4.5, 3.0) + sine(1.0), FS)) - 60.0) <= BIN_BPM


def test_constant_has_no_pulse():
    with pytest.raises(NoPulseError):
        estimate_hr(psd(np.ones(320), FS))


def test_band_above_nyquist_rejected():
    p = psd(np.random.default_rng(0).normal(size=80), 6.25)
    with pytest.raises(InputError):
        estimate_hr(p, HrBand())
    assert 39.6 <= estimate_hr(p, HrBand().clipped(6.25), reject_edge=False) <= 187.5


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, 320, elements=st.floats(-10, 10)), st.floats(-1e3, 1e3))
def test_shift_invariance_and_band(x, c):
    a, b = psd(x, FS), psd(x + c, FS)
    assert np.allclose(a.power, b.power, atol=1e-9 * max(1.0, a.power.max()))
    try:
        hr = estimate_hr(a)
    except NoPulseError:
        return
    assert 39.6 <= hr <= 240.0


class TestMetrics:
    def test_perfect(self):
        r = metrics([60, 70, 80], [60, 70, 80])
        assert (r.mae, r.rmse, r.pearson_rho) == (0, 0, 1)

    def test_constant_offset(self):
        r = metrics([63, 73, 83], [60, 70, 80])
        assert np.isclose(r.mae, 3) and np.isclose(r.rmse, 3) and np.isclose(r.pearson_rho, 1)

    def test_two_point_oracle(self):
        r = metrics([70, 80], [80, 70])
        assert (r.mae, r.rmse, r.pearson_rho, r.n_clips) == (10.0, 10.0, -1.0, 2)

    def test_constant_prediction_flags_rho(self):
        r = metrics([70, 70, 70], [60, 70, 80])
        assert r.pearson_rho is None and not r.rho_defined

    def test_length_mismatch(self):
        with pytest.raises(InputError):
            metrics([1, 2], [1, 2, 3])

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.tuples(st.floats(40, 240), st.floats(40, 240)), min_size=2, max_size=30))
    def test_rmse_at_least_mae(self, pairs):
        p, g = zip(*pairs)
        r = metrics(p, g)
        assert r.rmse >= r.mae - 1e-12

    def test_self_correlation(self, rng):
        x = rng.normal(size=50)
        assert abs(pearson(x, x) - 1.0) <= 1e-12
