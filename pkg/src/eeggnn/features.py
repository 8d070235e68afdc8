"""Band-wise differential-entropy features and LDS (Kalman) smoothing."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.signal import butter, sosfiltfilt

from .errors import ConfigError, ValidationError

VARIANCE_FLOOR = 1e-12
FILTER_ORDER = 4


@dataclass(frozen=True)
class BandDef:
    name: str
    lo_hz: float
    hi_hz: float

    def __post_init__(self):
        if not (0 < self.lo_hz < self.hi_hz):
            raise ValidationError(f"band {self.name!r}: need 0 < lo_hz < hi_hz, got {self.lo_hz}, {self.hi_hz}")


# Conventional affective-EEG band edges in Hz.
DEFAULT_BANDS = (
    BandDef("delta", 1.0, 4.0),
    BandDef("theta", 4.0, 8.0),
    BandDef("alpha", 8.0, 14.0),
    BandDef("beta", 14.0, 30.0),
    BandDef("gamma", 30.0, 47.0),
)


@dataclass
class RawRecording:
    signal: np.ndarray  # [n_channels, n_timesteps]
    fs_hz: float

    def __post_init__(self):
        self.signal = np.atleast_2d(np.asarray(self.signal, dtype=np.float64))
        if not self.fs_hz > 0:
            raise ValidationError(f"fs_hz must be positive, got {self.fs_hz}")
        if not np.isfinite(self.signal).all():
            raise ValidationError("recording contains non-finite samples")
        if self.signal.shape[1] < self.fs_hz:
            raise ValidationError(
                f"recording has {self.signal.shape[1]} samples, shorter than one second at {self.fs_hz} Hz"
            )


def differential_entropy(window) -> float:
    """Gaussian differential entropy ``0.5 * ln(2*pi*e*var)`` of one window.

    ``var`` is the unbiased sample variance, floored at 1e-12.
    """
    x = np.asarray(window, dtype=np.float64).ravel()
    if x.size < 2:
        raise ValidationError(f"window needs at least 2 samples, got {x.size}")
    var = max(float(np.var(x, ddof=1)), VARIANCE_FLOOR)
    return 0.5 * math.log(2 * math.pi * math.e * var)


def _de_last_axis(x: np.ndarray) -> np.ndarray:
    var = np.maximum(np.var(x, axis=-1, ddof=1), VARIANCE_FLOOR)
    return 0.5 * np.log(2 * np.pi * np.e * var)


def bandpass(signal: np.ndarray, band: BandDef, fs_hz: float) -> np.ndarray:
    """Zero-phase Butterworth band-pass along the last axis."""
    nyq = fs_hz / 2
    if band.hi_hz >= nyq:
        raise ConfigError(f"band {band.name!r} upper edge {band.hi_hz} Hz is not below Nyquist {nyq} Hz")
    sos = butter(FILTER_ORDER, [band.lo_hz, band.hi_hz], btype="bandpass", fs=fs_hz, output="sos")
    return sosfiltfilt(sos, signal, axis=-1)


def extract_de(rec: RawRecording, bands: Sequence[BandDef] = DEFAULT_BANDS, window_sec: float = 1.0) -> np.ndarray:
    """DE per non-overlapping window, channel and band: ``[n_windows, n_channels, n_bands]``."""
    if not bands:
        raise ConfigError("at least one band is required")
    for band in bands:
        if band.hi_hz >= rec.fs_hz / 2:
            raise ConfigError(
                f"band {band.name!r} upper edge {band.hi_hz} Hz is not below Nyquist {rec.fs_hz / 2} Hz"
            )
    win = int(round(rec.fs_hz * window_sec))
    if win < 2:
        raise ConfigError(f"window of {window_sec}s at {rec.fs_hz} Hz has fewer than 2 samples")
    n_ch, n_t = rec.signal.shape
    n_win = int(math.floor(n_t / (rec.fs_hz * window_sec)))
    out = np.empty((n_win, n_ch, len(bands)))
    for b, band in enumerate(bands):
        filtered = bandpass(rec.signal, band, rec.fs_hz)[:, : n_win * win]
        windows = filtered.reshape(n_ch, n_win, win)
        out[:, :, b] = _de_last_axis(windows).T
    return out


def lds_smooth(series, q: Optional[float] = None, r: Optional[float] = None) -> np.ndarray:
    """Fixed-interval (RTS) smoother for a scalar random walk observed in noise.

    State ``x_t = x_{t-1} + w``, ``w ~ N(0, q)``; observation ``y_t = x_t + v``,
    ``v ~ N(0, r)``. The prior is centred on the first observation with
    variance ``r``. ``q``/``r`` default to ``0.01*var(series)`` and
    ``var(series)``; a zero-variance series is returned unchanged in that case.
    """
    y = np.asarray(series, dtype=np.float64).ravel()
    if y.size < 1:
        raise ValidationError("series must contain at least one value")
    if not np.isfinite(y).all():
        raise ValidationError("series contains non-finite values")
    if q is None or r is None:
        v = float(np.var(y))
        if v == 0.0:
            return y.copy()
        q = 0.01 * v if q is None else q
        r = v if r is None else r
    if not (q > 0 and r > 0):
        raise ValidationError(f"q and r must be positive, got q={q}, r={r}")

    n = y.size
    m_pred = np.empty(n)
    p_pred = np.empty(n)
    m_filt = np.empty(n)
    p_filt = np.empty(n)
    m, p = y[0], r
    for t in range(n):
        mp, pp = m, p + q
        k = pp / (pp + r)
        m = mp + k * (y[t] - mp)
        p = (1 - k) * pp
        m_pred[t], p_pred[t], m_filt[t], p_filt[t] = mp, pp, m, p

    out = m_filt.copy()
    for t in range(n - 2, -1, -1):
        g = p_filt[t] / p_pred[t + 1]
        out[t] = m_filt[t] + g * (out[t + 1] - m_pred[t + 1])
    return out


def smooth_features(de: np.ndarray, q: Optional[float] = None, r: Optional[float] = None) -> np.ndarray:
    """Apply :func:`lds_smooth` along the window axis of a ``[n_windows, ...]`` array."""
    flat = de.reshape(de.shape[0], -1)
    out = np.empty_like(flat, dtype=np.float64)
    for j in range(flat.shape[1]):
        out[:, j] = lds_smooth(flat[:, j], q, r)
    return out.reshape(de.shape)
