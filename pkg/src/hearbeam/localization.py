"""Direction-of-arrival estimation for the 4-microphone array.

GCC-PHAT pairwise delay estimation, SRP-PHAT steered power over an azimuth
grid, peak extraction into per-frame source estimates, and circular azimuth
smoothing. Far-field plane-wave model, azimuth-only (elevation 0).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from hearbeam.dsp import AudioFormat, SpectralFrame

SRP_BAND_HZ = (125.0, 4000.0)
PEAK_CONFIDENCE_FLOOR = 0.15
PHAT_EPS = 1e-12


@dataclass(frozen=True)
class ArrayGeometry:
    """Microphone positions in the device frame, meters."""

    mic_positions: tuple[tuple[float, float, float], ...]
    speed_of_sound: float = 343.0

    def __post_init__(self) -> None:
        if len(self.mic_positions) < 2:
            raise ValueError("need at least 2 microphones")
        seen = set()
        for p in self.mic_positions:
            if p in seen:
                raise ValueError(f"duplicate microphone position {p}")
            seen.add(p)

    @classmethod
    def circular(cls, num_mics: int = 4, radius: float = 0.032) -> "ArrayGeometry":
        """Uniform circular array in the horizontal plane, mic 0 at azimuth 0."""
        positions = []
        for m in range(num_mics):
            az = 2.0 * math.pi * m / num_mics
            positions.append((radius * math.cos(az), radius * math.sin(az), 0.0))
        return cls(tuple(positions))

    @property
    def num_mics(self) -> int:
        return len(self.mic_positions)

    def centroid(self) -> np.ndarray:
        return np.asarray(self.mic_positions, dtype=np.float64).mean(axis=0)

    def farfield_delays(self, azimuth_deg: float) -> np.ndarray:
        """Arrival time of a plane wave at each mic relative to the centroid, s.

        Mics closer to the source (larger projection on the arrival
        direction) receive the wavefront earlier, i.e. negative delay.
        """
        pos = np.asarray(self.mic_positions, dtype=np.float64)
        az = math.radians(azimuth_deg)
        u = np.array([math.cos(az), math.sin(az), 0.0])
        return -((pos - self.centroid()) @ u) / self.speed_of_sound


@dataclass(frozen=True)
class AzimuthGrid:
    """Azimuth search grid in the horizontal plane."""

    resolution: float = 5.0

    def __post_init__(self) -> None:
        if self.resolution <= 0 or 360.0 % self.resolution != 0:
            raise ValueError("resolution must divide 360")

    @property
    def points(self) -> np.ndarray:
        return np.arange(0.0, 360.0, self.resolution)


@dataclass
class SourceEstimate:
    """One instantaneous detection: azimuth, SRP power, peak confidence."""

    azimuth: float
    power: float
    confidence: float
    frame_index: int = 0

    def __post_init__(self) -> None:
        self.azimuth = self.azimuth % 360.0


def wrap_degrees(az: float) -> float:
    az = az % 360.0
    # A tiny negative input can round to exactly 360.0 after the modulo.
    return 0.0 if az >= 360.0 else az


def circular_distance(a: float, b: float) -> float:
    """Shortest angular distance between two azimuths, degrees in [0, 180]."""
    d = abs(a - b) % 360.0
    return min(d, 360.0 - d)


def gcc_phat(
    x: np.ndarray, y: np.ndarray, max_lag: int, interp: int = 8
) -> tuple[float, float]:
    """PHAT-weighted cross-correlation delay between two signals.

    Returns (tdoa, peak) where a positive tdoa means y lags x by that many
    samples. The correlation is evaluated on a grid interp times denser than
    the sample rate (zero-padded inverse transform) before the 3-point
    parabolic refinement; fitting a parabola to the whitened peak directly
    at sample spacing biases the estimate toward integers by ~0.1 samples.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) != len(y):
        raise ValueError("signal length mismatch")
    if max_lag >= len(x) // 2:
        raise ValueError("max_lag must be < length/2")
    if interp < 1:
        raise ValueError("interp must be >= 1")
    nfft = 1 << (2 * len(x) - 1).bit_length()
    spec = np.conj(np.fft.rfft(x, nfft)) * np.fft.rfft(y, nfft)
    spec /= np.maximum(np.abs(spec), PHAT_EPS)
    cc = np.fft.irfft(spec, nfft * interp) * interp
    lags = np.arange(-max_lag * interp, max_lag * interp + 1)
    vals = cc[lags % (nfft * interp)]
    i = int(np.argmax(vals))
    peak = float(vals[i])
    tdoa = float(lags[i])
    if 0 < i < len(vals) - 1:
        a, b, c = vals[i - 1], vals[i], vals[i + 1]
        denom = a - 2 * b + c
        if abs(denom) > 1e-18:
            tdoa += 0.5 * (a - c) / denom
    return tdoa / interp, peak


def _band_mask(fmt: AudioFormat) -> np.ndarray:
    freqs = fmt.bin_freqs()
    return (freqs >= SRP_BAND_HZ[0]) & (freqs <= SRP_BAND_HZ[1])


@lru_cache(maxsize=8)
def _steering_phases(
    geometry: ArrayGeometry, grid: AzimuthGrid, fmt: AudioFormat
) -> tuple[np.ndarray, list[tuple[int, int]]]:
    """Per (azimuth, pair, band-bin) compensation phases for SRP steering."""
    pairs = [
        (i, j)
        for i in range(geometry.num_mics)
        for j in range(i + 1, geometry.num_mics)
    ]
    freqs = fmt.bin_freqs()[_band_mask(fmt)]
    azimuths = grid.points
    phases = np.empty((len(azimuths), len(pairs), len(freqs)), dtype=np.complex128)
    for a, az in enumerate(azimuths):
        delays = geometry.farfield_delays(float(az))
        for p, (i, j) in enumerate(pairs):
            tdoa = delays[j] - delays[i]
            phases[a, p] = np.exp(-2j * np.pi * freqs * tdoa)
    return phases, pairs


def _phat_pair_cross(
    spectral: SpectralFrame, geometry: ArrayGeometry, grid: AzimuthGrid
) -> tuple[np.ndarray, np.ndarray]:
    """Steering phases and PHAT-normalized pair cross-spectra, band-limited."""
    if spectral.bins.shape[0] != geometry.num_mics:
        raise ValueError(
            f"spectral has {spectral.bins.shape[0]} channels, "
            f"geometry has {geometry.num_mics} mics"
        )
    fmt = spectral.format
    bins = spectral.bins[:, _band_mask(fmt)]
    phases, pairs = _steering_phases(geometry, grid, fmt)
    cross = np.empty((len(pairs), bins.shape[1]), dtype=np.complex128)
    for p, (i, j) in enumerate(pairs):
        c = bins[i] * np.conj(bins[j])
        cross[p] = c / np.maximum(np.abs(c), PHAT_EPS)
    return phases, cross


def srp_phat(
    spectral: SpectralFrame, geometry: ArrayGeometry, grid: AzimuthGrid
) -> np.ndarray:
    """Steered response power with PHAT weighting over the azimuth grid.

    For each candidate azimuth, sums the phase-compensated PHAT
    cross-spectra of all mic pairs over the evaluation band.
    """
    phases, cross = _phat_pair_cross(spectral, geometry, grid)
    return np.real(np.einsum("apk,pk->a", phases, cross))


def srp_vote_map(
    spectral: SpectralFrame, geometry: ArrayGeometry, grid: AzimuthGrid
) -> np.ndarray:
    """Sparsity-aware steered response: each bin votes for one azimuth.

    Broadband SRP sums every bin's full response curve, so concurrent
    talkers blur into joint ridges and peaks migrate between them. Speech
    is sparse in time-frequency: any one bin mostly belongs to one talker.
    Here each band bin casts a single vote for its best azimuth, weighted
    by how decisively it prefers it, which keeps simultaneous talkers as
    separate modes. Silence yields an all-zero map.
    """
    return srp_maps(spectral, geometry, grid)[1]


def srp_maps(
    spectral: SpectralFrame, geometry: ArrayGeometry, grid: AzimuthGrid
) -> tuple[np.ndarray, np.ndarray]:
    """Broadband SRP map and bin-vote map from one pass over the pairs.

    The two are complementary: vote peaks sit on individual talkers even
    during overlap, while the broadband map carries loudness-like values
    whose median gives peaks a meaningful confidence.
    """
    phases, cross = _phat_pair_cross(spectral, geometry, grid)
    response = np.real(np.einsum("apk,pk->ak", phases, cross))
    best = np.argmax(response, axis=0)
    weight = response[best, np.arange(response.shape[1])] - response.mean(axis=0)
    votes = np.zeros(len(grid.points))
    np.add.at(votes, best, np.maximum(weight, 0.0))
    return response.sum(axis=1), votes


def extract_peaks(
    power_map: np.ndarray,
    grid: AzimuthGrid,
    max_sources: int = 4,
    min_separation: float = 20.0,
    frame_index: int = 0,
    confidence_floor: float = PEAK_CONFIDENCE_FLOOR,
) -> list[SourceEstimate]:
    """Pick up to max_sources confident local maxima from an SRP power map.

    Greedy in descending power with circular suppression inside
    min_separation; peaks whose confidence (peak minus map median, relative
    to the peak) falls below the floor are dropped.
    """
    if max_sources < 1:
        raise ValueError("max_sources must be >= 1")
    if min_separation < grid.resolution:
        raise ValueError("min_separation must be >= grid resolution")
    power_map = np.asarray(power_map, dtype=np.float64)
    azimuths = grid.points
    median = float(np.median(power_map))
    left = np.roll(power_map, 1)
    right = np.roll(power_map, -1)
    candidates = np.flatnonzero((power_map >= left) & (power_map >= right))
    order = candidates[np.argsort(power_map[candidates])[::-1]]
    estimates: list[SourceEstimate] = []
    for idx in order:
        if len(estimates) >= max_sources:
            break
        az = float(azimuths[idx])
        if any(circular_distance(az, e.azimuth) < min_separation for e in estimates):
            continue
        peak = float(power_map[idx])
        if peak <= 0:
            continue
        confidence = min(max((peak - median) / peak, 0.0), 1.0)
        if confidence < confidence_floor:
            continue
        estimates.append(SourceEstimate(az, peak, confidence, frame_index))
    return estimates


def smooth_azimuth(previous: float, observation: float, alpha: float) -> float:
    """Exponential smoothing on the circle via unit-vector averaging."""
    if alpha >= 1.0:
        return wrap_degrees(observation)
    if alpha <= 0.0:
        return wrap_degrees(previous)
    pa, ob = math.radians(previous), math.radians(observation)
    x = (1.0 - alpha) * math.cos(pa) + alpha * math.cos(ob)
    y = (1.0 - alpha) * math.sin(pa) + alpha * math.sin(ob)
    if x == 0.0 and y == 0.0:
        # Antipodal inputs at alpha 0.5: keep the observation.
        return wrap_degrees(observation)
    return wrap_degrees(math.degrees(math.atan2(y, x)))


def unit_sphere_point(azimuth_deg: float) -> tuple[float, float, float]:
    az = math.radians(azimuth_deg)
    return (math.cos(az), math.sin(az), 0.0)


def export_source_map(estimates: list[SourceEstimate]) -> dict:
    """Telemetry fragment: estimates as unit-sphere points with power/confidence.

    Emitted every frame; an empty estimate list still yields a record with an
    empty source array.
    """
    return {
        "sources": [
            {
                "azimuth": round(e.azimuth, 3),
                "power": float(e.power),
                "confidence": round(e.confidence, 4),
                "point": [round(c, 6) for c in unit_sphere_point(e.azimuth)],
            }
            for e in estimates
        ]
    }
