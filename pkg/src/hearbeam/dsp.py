"""Core DSP primitives shared by the whole pipeline.

Framing, windowed STFT/iSTFT with overlap-add, band-limited fractional
delay, and level metering. Everything here is a pure value-in/value-out
operation except the small streaming helper classes, which own only their
own rolling buffers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SILENCE_FLOOR_DBFS = -120.0


@dataclass(frozen=True)
class AudioFormat:
    """Fixed per-run audio configuration.

    hop_len must divide frame_len and frame_len must be a power of two so
    the analysis window satisfies constant overlap-add at the hop.
    """

    sample_rate: int = 16000
    channels: int = 4
    frame_len: int = 512
    hop_len: int = 256

    def __post_init__(self) -> None:
        if self.channels < 1:
            raise ValueError("channels must be >= 1")
        if self.frame_len <= 0 or (self.frame_len & (self.frame_len - 1)) != 0:
            raise ValueError("frame_len must be a positive power of two")
        if self.hop_len <= 0 or self.frame_len % self.hop_len != 0:
            raise ValueError("hop_len must divide frame_len")

    @property
    def n_bins(self) -> int:
        return self.frame_len // 2 + 1

    @property
    def hop_duration(self) -> float:
        return self.hop_len / self.sample_rate

    def bin_freqs(self) -> np.ndarray:
        """Center frequency in Hz of each rFFT bin."""
        return np.fft.rfftfreq(self.frame_len, d=1.0 / self.sample_rate)


@dataclass
class MultiChannelFrame:
    """One hop of synchronized samples for all channels.

    timestamp is the sample index of the first sample in the stream.
    """

    format: AudioFormat
    samples: np.ndarray  # (channels, hop_len)
    timestamp: int = 0

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.shape != (self.format.channels, self.format.hop_len):
            raise ValueError(
                f"samples must be (channels, hop_len) = "
                f"({self.format.channels}, {self.format.hop_len}), "
                f"got {self.samples.shape}"
            )


@dataclass
class SpectralFrame:
    """Complex rFFT bins per channel for one analysis window."""

    format: AudioFormat
    bins: np.ndarray  # (channels, frame_len // 2 + 1)
    frame_index: int = 0

    def __post_init__(self) -> None:
        self.bins = np.asarray(self.bins, dtype=np.complex128)
        if self.bins.ndim != 2 or self.bins.shape[1] != self.format.n_bins:
            raise ValueError(
                f"bins must have {self.format.n_bins} bins per channel, "
                f"got shape {self.bins.shape}"
            )


def analysis_window(frame_len: int) -> np.ndarray:
    """Periodic Hann window; sums to 1 across hops at 50% (or denser) overlap."""
    n = np.arange(frame_len)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / frame_len)


def frame_stream(samples, fmt: AudioFormat) -> list[MultiChannelFrame]:
    """Slice per-channel sample sequences into hop-sized frames.

    The final partial hop is zero-padded. Concatenating all frame hops
    reproduces the input plus that trailing pad. Empty input yields an
    empty list.
    """
    chans = [np.asarray(c, dtype=np.float64) for c in samples]
    if len(chans) != fmt.channels:
        raise ValueError(f"expected {fmt.channels} channels, got {len(chans)}")
    lengths = {len(c) for c in chans}
    if len(lengths) > 1:
        raise ValueError(f"channel length mismatch: {sorted(lengths)}")
    n = lengths.pop() if lengths else 0
    if n == 0:
        return []
    hop = fmt.hop_len
    n_frames = (n + hop - 1) // hop
    padded = np.zeros((fmt.channels, n_frames * hop))
    padded[:, :n] = np.stack(chans)
    return [
        MultiChannelFrame(fmt, padded[:, i * hop : (i + 1) * hop], timestamp=i * hop)
        for i in range(n_frames)
    ]


def deframe(frames: list[MultiChannelFrame]) -> np.ndarray:
    """Concatenate frame hops back into (channels, n) samples."""
    if not frames:
        return np.zeros((0, 0))
    return np.concatenate([f.samples for f in frames], axis=1)


def stft(window_samples: np.ndarray, fmt: AudioFormat, frame_index: int = 0) -> SpectralFrame:
    """Windowed rFFT of one frame_len-long analysis window per channel."""
    window_samples = np.atleast_2d(np.asarray(window_samples, dtype=np.float64))
    if window_samples.shape[1] != fmt.frame_len:
        raise ValueError(
            f"window length {window_samples.shape[1]} != frame_len {fmt.frame_len}"
        )
    win = analysis_window(fmt.frame_len)
    return SpectralFrame(fmt, np.fft.rfft(window_samples * win, axis=1), frame_index)


def istft_overlap_add(frames: list[SpectralFrame]) -> np.ndarray:
    """Reconstruct (channels, n) samples from a sequence of spectral frames.

    The analysis window is COLA at the hop, so plain overlap-add of the
    inverse transforms reconstructs the interior exactly; the first and
    last frame_len samples carry the usual edge taper.
    """
    if not frames:
        return np.zeros((0, 0))
    fmt = frames[0].format
    n_out = fmt.frame_len + (len(frames) - 1) * fmt.hop_len
    channels = frames[0].bins.shape[0]
    out = np.zeros((channels, n_out))
    for i, frame in enumerate(frames):
        seg = np.fft.irfft(frame.bins, n=fmt.frame_len, axis=1)
        start = i * fmt.hop_len
        out[:, start : start + fmt.frame_len] += seg
    return out


class StreamingStft:
    """Rolling analysis buffer: push one hop, get one spectral frame.

    The buffer starts zero-filled, so the first frame_len - hop_len samples
    of analysis context are silence (the usual streaming priming latency).
    """

    def __init__(self, fmt: AudioFormat, channels: int | None = None):
        self.fmt = fmt
        self.channels = fmt.channels if channels is None else channels
        self._buf = np.zeros((self.channels, fmt.frame_len))
        self._index = 0

    def push(self, hop_samples: np.ndarray) -> SpectralFrame:
        hop_samples = np.atleast_2d(hop_samples)
        if hop_samples.shape != (self.channels, self.fmt.hop_len):
            raise ValueError("hop shape mismatch")
        self._buf = np.roll(self._buf, -self.fmt.hop_len, axis=1)
        self._buf[:, -self.fmt.hop_len :] = hop_samples
        frame = stft(self._buf, self.fmt, self._index)
        self._index += 1
        return frame


class StreamingIstft:
    """Overlap-add synthesis: push one single-channel spectrum, get one hop."""

    def __init__(self, fmt: AudioFormat):
        self.fmt = fmt
        self._tail = np.zeros(fmt.frame_len)

    def push(self, bins: np.ndarray) -> np.ndarray:
        seg = np.fft.irfft(np.asarray(bins).ravel(), n=self.fmt.frame_len)
        self._tail += seg
        hop = self.fmt.hop_len
        out = self._tail[:hop].copy()
        self._tail = np.concatenate([self._tail[hop:], np.zeros(hop)])
        return out

    def push_time(self, window_samples: np.ndarray) -> np.ndarray:
        """Overlap-add an already windowed time-domain frame."""
        self._tail += window_samples
        hop = self.fmt.hop_len
        out = self._tail[:hop].copy()
        self._tail = np.concatenate([self._tail[hop:], np.zeros(hop)])
        return out


def _sinc_kernel(frac: float, num_taps: int) -> np.ndarray:
    """Windowed-sinc interpolation taps for a sub-sample delay of frac.

    The Hann taper is centered on the sinc peak, so the kernel is symmetric
    about (num_taps // 2 - 1) + frac and therefore has exactly linear phase:
    its group delay is the requested fraction, with no window-offset bias.
    """
    x = np.arange(num_taps) - (num_taps // 2 - 1) - frac
    kernel = np.sinc(x) * (0.5 + 0.5 * np.cos(np.pi * x / (num_taps // 2)))
    return kernel / kernel.sum()


def fractional_delay(signal: np.ndarray, delay: float, num_taps: int = 64) -> np.ndarray:
    """Delay a signal by a possibly non-integer number of samples.

    Band-limited interpolation with a Hann-windowed sinc kernel. Integer
    delays (including 0) reduce to an exact sample shift. Output has the
    same length as the input; samples shifted in from outside are zero.
    """
    signal = np.asarray(signal, dtype=np.float64)
    if abs(delay) >= len(signal):
        raise ValueError(f"|delay| {delay} must be < signal length {len(signal)}")
    k = math.floor(delay)
    frac = delay - k
    out = np.empty_like(signal)
    if frac == 0.0:
        y = signal
    else:
        y = np.convolve(signal, _sinc_kernel(frac, num_taps))[
            num_taps // 2 - 1 : num_taps // 2 - 1 + len(signal)
        ]
    if k >= 0:
        out[:k] = 0.0
        out[k:] = y[: len(signal) - k]
    else:
        out[: len(signal) + k] = y[-k:]
        out[len(signal) + k :] = 0.0
    return out


def rms(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        return 0.0
    return float(np.sqrt(np.mean(x * x)))


def rms_dbfs(x: np.ndarray) -> float:
    """RMS level in dBFS; all-zero (or empty) input maps to the -120 floor."""
    r = rms(x)
    if r <= 0.0:
        return SILENCE_FLOOR_DBFS
    return max(20.0 * math.log10(r), SILENCE_FLOOR_DBFS)


def db_to_lin(db: float) -> float:
    return 10.0 ** (db / 20.0)


def lin_to_db(lin: float, floor_db: float = SILENCE_FLOOR_DBFS) -> float:
    if lin <= 0.0:
        return floor_db
    return max(20.0 * math.log10(lin), floor_db)
