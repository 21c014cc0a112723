"""WAV file helpers with a channels-first float convention.

Everything internal is float64 in [-1, 1) shaped (channels, n); these wrap
scipy.io.wavfile and handle the int16/int32/float32 scaling at the border.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.io import wavfile


def read_wav(path: str | Path) -> tuple[int, np.ndarray]:
    """Read a WAV file into (sample_rate, float samples shaped (channels, n))."""
    sample_rate, data = wavfile.read(str(path))
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        samples = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 128.0
    else:
        samples = data.astype(np.float64)
    if samples.ndim == 1:
        samples = samples[np.newaxis, :]
    else:
        samples = samples.T
    return sample_rate, samples


def write_wav(
    path: str | Path,
    sample_rate: int,
    samples: np.ndarray,
    dtype: str = "int16",
) -> None:
    """Write (channels, n) float samples; dtype int16 or float32."""
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    data = samples.T if samples.shape[0] > 1 else samples.ravel()
    if dtype == "int16":
        clipped = np.clip(data, -1.0, 32767.0 / 32768.0)
        wavfile.write(str(path), sample_rate, (clipped * 32768.0).astype(np.int16))
    elif dtype == "float32":
        wavfile.write(str(path), sample_rate, data.astype(np.float32))
    else:
        raise ValueError(f"unsupported dtype {dtype!r}")
