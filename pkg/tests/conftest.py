"""Shared fixtures and independent oracle helpers used across the suite."""

from __future__ import annotations

import numpy as np
import pytest

from hearbeam.dsp import AudioFormat
from hearbeam.localization import ArrayGeometry


@pytest.fixture
def fmt() -> AudioFormat:
    return AudioFormat()


@pytest.fixture
def fmt_mono() -> AudioFormat:
    return AudioFormat(channels=1)


@pytest.fixture
def geometry() -> ArrayGeometry:
    return ArrayGeometry.circular()


def brute_force_xcorr_tdoa(x: np.ndarray, y: np.ndarray, max_lag: int) -> int:
    """Integer-lag TDOA by exhaustive time-domain cross-correlation.

    Positive lag means y lags x (y is x delayed). Independent of any FFT
    path: plain dot products over every candidate shift.
    """
    best_lag, best_val = 0, -np.inf
    n = len(x)
    for lag in range(-max_lag, max_lag + 1):
        if lag >= 0:
            v = float(np.dot(x[: n - lag], y[lag:]))
        else:
            v = float(np.dot(x[-lag:], y[: n + lag]))
        if v > best_val:
            best_val, best_lag = v, lag
    return best_lag


def direct_dft_bin(x: np.ndarray, k: int) -> complex:
    """Single DFT bin by direct summation (no FFT)."""
    n = np.arange(len(x))
    return complex(np.sum(x * np.exp(-2j * np.pi * k * n / len(x))))


def delayed_sine(freq: float, delay_samples: float, n: int, sr: int) -> np.ndarray:
    """Analytic rendering of a sine delayed by a fractional sample count."""
    t = (np.arange(n) - delay_samples) / sr
    return np.sin(2.0 * np.pi * freq * t)


def fit_group_delay(h: np.ndarray, sample_rate: int, lo=200.0, hi=3000.0) -> float:
    """Delay of a filter in samples from its phase slope over [lo, hi] Hz.

    Independent of peak picking: least-squares fit of unwrapped phase
    against angular frequency.
    """
    nfft = 1 << (2 * len(h)).bit_length()
    spectrum = np.fft.rfft(h, nfft)
    freqs = np.fft.rfftfreq(nfft, 1.0 / sample_rate)
    band = (freqs >= lo) & (freqs <= hi)
    phase = np.unwrap(np.angle(spectrum))
    slope = np.polyfit(2.0 * np.pi * freqs[band], phase[band], 1)[0]
    return -slope * sample_rate


def schroeder_rt60(rir: np.ndarray, sample_rate: int, lo_db=-5.0, hi_db=-25.0) -> float:
    """Reverberation time from backward-integrated energy decay.

    Linear fit of the decay curve between lo_db and hi_db, extrapolated
    to -60 dB. Textbook method, no dependence on the renderer internals.
    """
    energy = np.cumsum(rir[::-1] ** 2)[::-1]
    decay_db = 10.0 * np.log10(energy / energy[0] + 1e-30)
    i0 = int(np.argmax(decay_db <= lo_db))
    i1 = int(np.argmax(decay_db <= hi_db))
    slope = (decay_db[i1] - decay_db[i0]) / ((i1 - i0) / sample_rate)
    return -60.0 / slope


def plane_wave_mic_signals(
    source: np.ndarray,
    geometry: ArrayGeometry,
    azimuth_deg: float,
    sample_rate: int,
) -> np.ndarray:
    """Render far-field mic signals for a plane wave from the given azimuth.

    Uses the band-limited fractional delay as the rendering oracle: each mic
    receives the source advanced/delayed by its projection onto the arrival
    direction, relative to the array centroid.
    """
    from hearbeam.dsp import fractional_delay

    pos = np.asarray(geometry.mic_positions, dtype=np.float64)
    centroid = pos.mean(axis=0)
    az = np.deg2rad(azimuth_deg)
    u = np.array([np.cos(az), np.sin(az), 0.0])
    delays = -((pos - centroid) @ u) / geometry.speed_of_sound * sample_rate
    return np.stack([fractional_delay(source, d) for d in delays])
