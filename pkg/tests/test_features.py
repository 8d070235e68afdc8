import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eeggnn.errors import ConfigError, ValidationError
from eeggnn.features import (
    DEFAULT_BANDS,
    BandDef,
    RawRecording,
    differential_entropy,
    extract_de,
    lds_smooth,
    smooth_features,
)

FLOOR = 0.5 * math.log(2 * math.pi * math.e * 1e-12)


def two_point(var):
    # ddof=1 variance of [0, d] is d**2 / 2
    return np.array([0.0, math.sqrt(2 * var)])


def test_de_zero_at_unit_argument():
    assert differential_entropy(two_point(1 / (2 * math.pi * math.e))) == pytest.approx(0.0, abs=1e-12)


def test_de_unit_variance():
    expected = 0.5 * math.log(2 * math.pi * math.e)
    assert expected == pytest.approx(1.4189385332, abs=1e-10)
    assert differential_entropy(two_point(1.0)) == pytest.approx(expected, abs=1e-12)


def test_de_constant_window_floor():
    assert differential_entropy(np.full(16, 3.2)) == FLOOR


def test_de_too_short():
    with pytest.raises(ValidationError):
        differential_entropy([1.0])


@given(st.lists(st.integers(-1000, 1000), min_size=8, max_size=8), st.integers(-10**6, 10**6))
def test_de_shift_invariant_exact(values, c):
    # integer data of power-of-two length keeps every intermediate exact
    x = np.array(values, dtype=np.float64)
    assert differential_entropy(x + c) == differential_entropy(x)


@given(
    st.lists(st.floats(-100, 100, allow_nan=False), min_size=3, max_size=40),
    st.floats(1e-3, 1e3) | st.floats(-1e3, -1e-3),
)
def test_de_scaling_law(values, a):
    x = np.array(values)
    if np.var(x, ddof=1) < 1e-6:
        return
    assert differential_entropy(a * x) == pytest.approx(differential_entropy(x) + math.log(abs(a)), abs=1e-9)


def fft_band_de(signal, fs, lo, hi, win):
    """Reference: brick-wall FFT band-pass then per-window DE."""
    spec = np.fft.rfft(signal)
    freqs = np.fft.rfftfreq(signal.size, 1 / fs)
    spec[(freqs < lo) | (freqs > hi)] = 0
    y = np.fft.irfft(spec, n=signal.size)
    return np.array([differential_entropy(w) for w in y[: (y.size // win) * win].reshape(-1, win)])


def test_alpha_sinusoid_margin():
    fs, secs = 128, 10
    t = np.arange(fs * secs) / fs
    sig = np.sin(2 * np.pi * 10 * t)
    bands = [BandDef("delta", 1, 4), BandDef("alpha", 8, 14)]
    de = extract_de(RawRecording(sig[None, :], fs), bands)
    ref_delta = fft_band_de(sig, fs, 1, 4, fs)
    ref_alpha = fft_band_de(sig, fs, 8, 14, fs)
    assert (ref_alpha - ref_delta).min() > 1.0
    # interior windows avoid filter edge effects
    assert (de[1:-1, 0, 1] - de[1:-1, 0, 0]).min() > 1.0
    assert (de[:, 0, 1] - de[:, 0, 0]).min() > 1.0
    assert np.abs(de[1:-1, 0, 1] - ref_alpha[1:-1]).max() < 0.1


def test_window_count_and_shape():
    rec = RawRecording(np.random.default_rng(0).normal(size=(3, 128 * 10 + 50)), 128)
    out = extract_de(rec, DEFAULT_BANDS)
    assert out.shape == (10, 3, 5)
    out = extract_de(rec, DEFAULT_BANDS[:2], window_sec=2.0)
    assert out.shape == (5, 3, 2)


def test_band_above_nyquist():
    rec = RawRecording(np.zeros((1, 256)) + np.arange(256), 128)
    with pytest.raises(ConfigError):
        extract_de(rec, [BandDef("high", 30, 70)])


def test_recording_validation():
    with pytest.raises(ValidationError):
        RawRecording(np.zeros((2, 10)), 128)
    with pytest.raises(ValidationError):
        BandDef("bad", 8, 4)


def test_lds_constant_series():
    x = np.full(25, 4.75)
    assert np.array_equal(lds_smooth(x, 0.3, 2.0), x)
    assert np.array_equal(lds_smooth(x), x)


def test_lds_tiny_observation_noise():
    x = np.random.default_rng(5).normal(size=60)
    assert np.abs(lds_smooth(x, q=1.0, r=1e-9) - x).max() < 1e-6


def dense_posterior_mean(y, q, r):
    """Reference smoother: solve the normal equations of the full Gaussian posterior."""
    n = y.size
    H = np.zeros((n, n))
    b = np.zeros(n)
    H[0, 0] += 1 / (r + q)
    b[0] += y[0] / (r + q)
    H += np.eye(n) / r
    b += y / r
    for t in range(1, n):
        H[t, t] += 1 / q
        H[t - 1, t - 1] += 1 / q
        H[t, t - 1] -= 1 / q
        H[t - 1, t] -= 1 / q
    return np.linalg.solve(H, b)


def test_lds_alternating_matches_reference():
    y = np.tile([0.0, 1.0], 20)
    out = lds_smooth(y, q=0.01, r=1.0)
    ref = dense_posterior_mean(y, 0.01, 1.0)
    assert np.abs(out - ref).max() < 1e-10
    assert out.var() < y.var()


@settings(max_examples=50)
@given(st.integers(2, 30), st.floats(1e-3, 10), st.floats(1e-3, 10), st.integers(0, 10**6))
def test_lds_matches_reference_random(n, q, r, seed):
    y = np.random.default_rng(seed).normal(size=n) * 3
    assert np.abs(lds_smooth(y, q, r) - dense_posterior_mean(y, q, r)).max() < 1e-8


@settings(max_examples=50)
@given(st.integers(1, 40), st.floats(-5, 5), st.floats(-5, 5), st.integers(0, 10**6))
def test_lds_linear(n, alpha, beta, seed):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=n), rng.normal(size=n)
    lhs = lds_smooth(alpha * x + beta * y, 0.05, 0.7)
    rhs = alpha * lds_smooth(x, 0.05, 0.7) + beta * lds_smooth(y, 0.05, 0.7)
    assert np.abs(lhs - rhs).max() < 1e-9


def test_lds_rejects_bad_params():
    with pytest.raises(ValidationError):
        lds_smooth([1.0, 2.0], q=0.0, r=1.0)
    with pytest.raises(ValidationError):
        lds_smooth([1.0, 2.0], q=1.0, r=-1.0)


def test_smooth_features_shape():
    de = np.random.default_rng(2).normal(size=(12, 4, 5))
    out = smooth_features(de)
    assert out.shape == de.shape
    assert np.allclose(out[:, 2, 3], lds_smooth(de[:, 2, 3]))
