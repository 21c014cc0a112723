"""Frequency-domain delay-and-sum beamformer with click-free retargeting.

Steering weights phase-align a far-field plane wave from the chosen azimuth
(relative to the array centroid) and the channels are averaged. Retargeting
crossfades linearly over a fixed number of frames so automatic speaker
switches do not click; a retarget that lands mid-crossfade restarts the fade
from the instantaneous mixed weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from hearbeam.dsp import AudioFormat, SpectralFrame
from hearbeam.localization import ArrayGeometry, circular_distance, wrap_degrees

CROSSFADE_FRAMES = 8


@dataclass
class SteeringVector:
    """Unit-magnitude phase weights for one steering azimuth."""

    azimuth: float
    weights: np.ndarray  # (channels, n_bins) complex


@dataclass
class BeamState:
    """Current beam pointing plus any crossfade in progress.

    from_weights holds the effective weights the fade started from; None
    when no fade is active (current == target).
    """

    current_azimuth: float = 0.0
    target_azimuth: float = 0.0
    crossfade_remaining: int = 0
    from_weights: np.ndarray | None = field(default=None, repr=False)


@lru_cache(maxsize=256)
def _steering_weights(
    geometry: ArrayGeometry, azimuth: float, fmt: AudioFormat
) -> np.ndarray:
    delays = geometry.farfield_delays(azimuth)
    freqs = fmt.bin_freqs()
    return np.exp(2j * np.pi * np.outer(delays, freqs))


def steering_vector(
    geometry: ArrayGeometry, azimuth: float, fmt: AudioFormat
) -> SteeringVector:
    """Phase-alignment weights for a plane wave from the given azimuth.

    weight[m][k] = exp(+j 2π f_k τ_m) with τ_m the far-field delay of mic m
    relative to the array centroid; the DC weight is 1 on every channel.
    """
    azimuth = wrap_degrees(azimuth)
    return SteeringVector(azimuth, _steering_weights(geometry, azimuth, fmt))


def delay_and_sum(spectral: SpectralFrame, steering: SteeringVector) -> np.ndarray:
    """Average the phase-aligned channels into a single-channel spectrum."""
    if spectral.bins.shape != steering.weights.shape:
        raise ValueError(
            f"spectral {spectral.bins.shape} vs steering {steering.weights.shape}"
        )
    return np.mean(steering.weights * spectral.bins, axis=0)


def retarget_beam(
    state: BeamState,
    new_azimuth: float,
    geometry: ArrayGeometry,
    fmt: AudioFormat,
    crossfade_frames: int = CROSSFADE_FRAMES,
) -> BeamState:
    """Point the beam at a new azimuth, starting a linear crossfade.

    Retargeting to the current azimuth with no fade in progress is a no-op.
    A retarget during a fade snapshots the instantaneous mixed weights as
    the new fade origin, so the output stays continuous.
    """
    new_azimuth = wrap_degrees(new_azimuth)
    if state.crossfade_remaining == 0 and circular_distance(
        state.current_azimuth, new_azimuth
    ) == 0.0:
        return state
    if new_azimuth == state.target_azimuth and state.crossfade_remaining > 0:
        return state
    return BeamState(
        current_azimuth=state.current_azimuth,
        target_azimuth=new_azimuth,
        crossfade_remaining=crossfade_frames,
        from_weights=effective_weights(state, geometry, fmt).copy(),
    )


def effective_weights(
    state: BeamState,
    geometry: ArrayGeometry,
    fmt: AudioFormat,
    crossfade_frames: int = CROSSFADE_FRAMES,
) -> np.ndarray:
    """Weights to apply this frame, mixing old and new during a crossfade."""
    target = _steering_weights(geometry, state.target_azimuth, fmt)
    if state.crossfade_remaining <= 0 or state.from_weights is None:
        return target
    # w walks 1/n, 2/n, ..., 1 so the final fade frame sits on the target.
    w = (crossfade_frames - state.crossfade_remaining + 1) / crossfade_frames
    return (1.0 - w) * state.from_weights + w * target


def advance_crossfade(state: BeamState) -> BeamState:
    """Step the crossfade by one frame; lands on the target when done."""
    if state.crossfade_remaining <= 0:
        return state
    remaining = state.crossfade_remaining - 1
    if remaining == 0:
        return BeamState(
            current_azimuth=state.target_azimuth,
            target_azimuth=state.target_azimuth,
            crossfade_remaining=0,
        )
    return BeamState(
        current_azimuth=state.current_azimuth,
        target_azimuth=state.target_azimuth,
        crossfade_remaining=remaining,
        from_weights=state.from_weights,
    )


class Beamformer:
    """Owns a BeamState and produces the beam-path spectrum per frame."""

    def __init__(
        self,
        geometry: ArrayGeometry,
        fmt: AudioFormat,
        initial_azimuth: float = 0.0,
        crossfade_frames: int = CROSSFADE_FRAMES,
    ):
        self.geometry = geometry
        self.fmt = fmt
        self.crossfade_frames = crossfade_frames
        self.state = BeamState(
            current_azimuth=wrap_degrees(initial_azimuth),
            target_azimuth=wrap_degrees(initial_azimuth),
        )

    @property
    def azimuth(self) -> float:
        """Where the beam is headed (target during a crossfade)."""
        return self.state.target_azimuth

    def retarget(self, azimuth: float) -> None:
        self.state = retarget_beam(
            self.state, azimuth, self.geometry, self.fmt, self.crossfade_frames
        )

    def process(self, spectral: SpectralFrame) -> np.ndarray:
        weights = effective_weights(
            self.state, self.geometry, self.fmt, self.crossfade_frames
        )
        self.state = advance_crossfade(self.state)
        return np.mean(weights * spectral.bins, axis=0)
