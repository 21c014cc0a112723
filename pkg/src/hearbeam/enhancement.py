"""Single-channel enhancement chain behind the beamformer.

Every stage is an independently switchable feature with one owner each:
echo cancellation (per-bin subband NLMS with a coherence double-talk
detector), a level gate tied to the canceller's threshold slider, a 70 Hz
high-pass, stationary noise suppression driven by minimum-statistics noise
tracking, a harsher non-stationary mode gated on spectral harmonicity,
a transient step limiter, comfort-noise refill of gated bins, and AGC with
a hard limiter.

Stage order: AEC -> threshold gate -> high-pass -> stationary ->
non-stationary -> transient -> comfort noise -> AGC. Echo must go before
the noise statistics see the signal; AGC normalizes whatever is left.

The chain runs on the analysis hop clock. Spectral suppression happens on
its own STFT of the gated, high-passed time signal, so the suppressors are
skipped entirely (not run at unity) when their flags are off; with every
flag off the output is bit-identical to the plain inverse transform of the
beam spectrum. Enabling any spectral stage adds one window of lookback
(frame_len - hop_len samples) of extra latency.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.signal import butter, sosfilt, sosfilt_zi

from hearbeam.dsp import (
    AudioFormat,
    StreamingIstft,
    StreamingStft,
    analysis_window,
    db_to_lin,
    rms_dbfs,
)

HIGHPASS_CUTOFF_HZ = 70.0
STATIONARY_FLOOR_DB = -15.0
NONSTATIONARY_FLOOR_DB = -25.0
COMFORT_OFFSET_DB = -15.0
PROFILE_WARMUP_FRAMES = 10
PSD_FLOOR = 1e-12

NOISE_SMOOTH_BETA = 0.8
NOISE_SUBWINDOW_FRAMES = 12
NOISE_SUBWINDOWS = 8  # 8 * 12 frames = 1.54 s tracking window at defaults
NOISE_BIAS_COMP = 2.3  # empirical, unbiases the windowed minimum for white noise

PRESENCE_SNR_DB = 5.0
PRESENCE_SLOPE_DB = 2.0
ONSET_JUMP_RATIO = 4.0  # instantaneous power this far above the track is an onset

HARMONIC_LAG_HZ = (80.0, 400.0)
HARMONICITY_THRESHOLD = 0.3
HARMONICITY_SMOOTH_ALPHA = 0.5  # frame-to-frame EMA; outlier scores cannot flip the gate

TRANSIENT_FLUX_RATIO = 4.0
TRANSIENT_MEDIAN_FRAMES = 63  # about 1 s of flux history
TRANSIENT_MAX_RISE_DB = 6.0
TRANSIENT_MAX_FRAMES = 3

AEC_BLOCKS = 10
AEC_STEP = 0.5
AEC_NORM_FLOOR = 0.1  # of the mean bin norm; reins in bins the far end never excites
AEC_FAR_ACTIVE_DBFS = -50.0
AEC_DIVERGE_RATIO = 2.0  # error above twice the mic power means the taps are wrong
AEC_DIVERGE_DECAY = 0.9
AEC_DT_RATIO = 8.0  # error/mic ratio jump that signals near-end speech
AEC_DT_CONVERGED = 0.25  # no double-talk verdicts until the ratio floor beats this
AEC_RATIO_RELEASE = 1.02  # per-frame creep of the ratio floor (~5 dB/s)
AEC_HOLD_FRAMES = 8

AGC_TARGET_DBFS = -23.0
AGC_RAISE_DB_PER_S = 3.0
AGC_DROP_DB_PER_S = 12.0
AGC_FREEZE_BELOW_DBFS = -55.0
LIMITER_CEILING_DBFS = -1.0


@dataclass
class TuningState:
    """Runtime feature switches; one field per user-facing control."""

    agc_enabled: bool = True
    nonstationary_ns_enabled: bool = True
    stationary_ns_enabled: bool = True
    highpass_enabled: bool = True
    comfort_noise_enabled: bool = True
    transient_suppression_enabled: bool = True
    aec_enabled: bool = True
    aec_threshold: float = -60.0
    manual_source_id: int | None = None

    def __post_init__(self) -> None:
        if not -90.0 <= self.aec_threshold <= 0.0:
            raise ValueError("aec_threshold must be in [-90, 0] dBFS")


@dataclass
class NoiseProfile:
    """Minimum-statistics stationary noise tracker, one value per bin."""

    psd_estimate: np.ndarray
    speech_presence_prob: np.ndarray
    frames_seen: int = 0
    smoothed: np.ndarray | None = None
    subwindow_min: np.ndarray | None = None
    window_mins: np.ndarray | None = None  # (NOISE_SUBWINDOWS, n_bins)
    harmonicity_smooth: float | None = None
    _sub_frames: int = 0

    @classmethod
    def empty(cls, fmt: AudioFormat) -> "NoiseProfile":
        n = fmt.n_bins
        return cls(
            psd_estimate=np.full(n, PSD_FLOOR),
            speech_presence_prob=np.zeros(n),
        )


@dataclass
class EchoCancellerState:
    """Per-bin subband NLMS taps over a short history of far-end frames."""

    filter_taps: np.ndarray  # (AEC_BLOCKS, n_bins) complex
    far_history: np.ndarray  # (AEC_BLOCKS, n_bins) complex, newest first
    step_size: float = AEC_STEP
    double_talk_hold: int = 0
    ratio_floor: float = math.inf  # slow minimum of the error/mic power ratio

    @classmethod
    def fresh(cls, fmt: AudioFormat, blocks: int = AEC_BLOCKS) -> "EchoCancellerState":
        shape = (blocks, fmt.n_bins)
        return cls(
            filter_taps=np.zeros(shape, dtype=np.complex128),
            far_history=np.zeros(shape, dtype=np.complex128),
        )


@lru_cache(maxsize=4)
def _highpass_sos(sample_rate: int) -> np.ndarray:
    return butter(2, HIGHPASS_CUTOFF_HZ, "highpass", fs=sample_rate, output="sos")


def highpass(
    samples: np.ndarray, zi: np.ndarray | None = None, sample_rate: int = 16000
) -> tuple[np.ndarray, np.ndarray]:
    """Second-order Butterworth high-pass at 70 Hz, streaming-safe.

    Pass the returned zi back in to filter a continuation of the same
    signal without a boundary glitch.
    """
    sos = _highpass_sos(sample_rate)
    if zi is None:
        zi = np.zeros(sosfilt_zi(sos).shape)
    out, zi = sosfilt(sos, np.asarray(samples, dtype=np.float64), zi=zi)
    return out, zi


def _window_rms_scale(fmt: AudioFormat) -> float:
    win = analysis_window(fmt.frame_len)
    return float(np.sum(win**2))


def bins_rms_dbfs(bins: np.ndarray, fmt: AudioFormat) -> float:
    """Frame level in dBFS inferred from a one-channel spectrum.

    Parseval with the analysis-window energy divided out, so a steady
    signal reads the same level here as from its time samples.
    """
    bins = np.asarray(bins).ravel()
    energy = (
        np.abs(bins[0]) ** 2
        + 2.0 * np.sum(np.abs(bins[1:-1]) ** 2)
        + np.abs(bins[-1]) ** 2
    ) / fmt.frame_len
    mean_sq = energy / _window_rms_scale(fmt)
    if mean_sq <= 0.0:
        return -120.0
    return max(10.0 * math.log10(mean_sq), -120.0)


def update_noise_profile(
    profile: NoiseProfile, bins: np.ndarray, fmt: AudioFormat | None = None
) -> NoiseProfile:
    """Advance the minimum-statistics tracker by one spectral frame.

    Smoothed per-bin power is min-tracked over NOISE_SUBWINDOWS short
    subwindows; the windowed minimum times a bias compensation is the
    stationary PSD. Presence probability is a sigmoid in the
    instantaneous-to-noise dB ratio. A smoothed harmonicity score rides
    along for the non-stationary stage. The profile is updated in place.
    """
    fmt = fmt or AudioFormat()
    mags = np.abs(np.asarray(bins).ravel())
    power = mags**2
    if profile.smoothed is None:
        profile.smoothed = power.copy()
        profile.subwindow_min = power.copy()
        profile.window_mins = np.tile(power, (NOISE_SUBWINDOWS, 1))
    else:
        profile.smoothed = (
            NOISE_SMOOTH_BETA * profile.smoothed + (1.0 - NOISE_SMOOTH_BETA) * power
        )
        np.minimum(profile.subwindow_min, profile.smoothed, out=profile.subwindow_min)

    profile._sub_frames += 1
    if profile._sub_frames >= NOISE_SUBWINDOW_FRAMES:
        profile.window_mins = np.roll(profile.window_mins, 1, axis=0)
        profile.window_mins[0] = profile.subwindow_min
        profile.subwindow_min = profile.smoothed.copy()
        profile._sub_frames = 0

    tracked = np.minimum(profile.window_mins.min(axis=0), profile.subwindow_min)
    profile.psd_estimate = np.maximum(tracked * NOISE_BIAS_COMP, PSD_FLOOR)

    snr_db = 10.0 * np.log10(np.maximum(power, PSD_FLOOR) / profile.psd_estimate)
    profile.speech_presence_prob = 1.0 / (
        1.0 + np.exp(-(snr_db - PRESENCE_SNR_DB) / PRESENCE_SLOPE_DB)
    )
    if np.all(power < 10.0 * PSD_FLOOR):
        profile.speech_presence_prob = np.zeros_like(power)

    score = harmonicity(mags, fmt)
    if profile.harmonicity_smooth is None:
        profile.harmonicity_smooth = score
    else:
        profile.harmonicity_smooth = (
            (1.0 - HARMONICITY_SMOOTH_ALPHA) * profile.harmonicity_smooth
            + HARMONICITY_SMOOTH_ALPHA * score
        )
    profile.frames_seen += 1
    return profile


def _wiener_gain(power: np.ndarray, psd: np.ndarray) -> np.ndarray:
    snr = np.maximum(power / np.maximum(psd, PSD_FLOOR) - 1.0, 0.0)
    return snr / (1.0 + snr)


def _power_estimate(bins: np.ndarray, profile: NoiseProfile) -> np.ndarray:
    """Per-bin signal power for the gain rule.

    The smoothed track keeps gain variance (musical noise) down in steady
    noise; a bin jumping well above the track is a speech onset and is
    taken at face value so the gain opens within the same frame.
    """
    inst = np.abs(bins) ** 2
    if profile.smoothed is None:
        return inst
    return np.where(inst > ONSET_JUMP_RATIO * profile.smoothed, inst, profile.smoothed)


def suppress_stationary(
    bins: np.ndarray,
    profile: NoiseProfile,
    gain_floor_db: float = STATIONARY_FLOOR_DB,
) -> tuple[np.ndarray, np.ndarray]:
    """Wiener-style suppression against the stationary noise PSD.

    Returns (suppressed bins, applied gains). Pass-through at unity gain
    until the profile has seen enough frames to trust.
    """
    bins = np.asarray(bins).ravel()
    if profile.frames_seen < PROFILE_WARMUP_FRAMES:
        return bins, np.ones(len(bins))
    gains = np.maximum(
        _wiener_gain(_power_estimate(bins, profile), profile.psd_estimate),
        db_to_lin(gain_floor_db),
    )
    return bins * gains, gains


def harmonicity(mags: np.ndarray, fmt: AudioFormat) -> float:
    """Harmonic support score of a magnitude spectrum in [0, ~1].

    Autocorrelation of the detrended log spectrum at lags matching an
    80-400 Hz harmonic spacing; voiced speech scores high, clicks and
    clatter score near zero. Detrending (a 9-bin moving average) strips
    the formant/rolloff envelope so a merely smooth spectrum does not
    masquerade as a harmonic comb.
    """
    freqs = fmt.bin_freqs()
    band = (freqs >= 100.0) & (freqs <= 4000.0)
    log_spec = np.log(np.maximum(np.asarray(mags).ravel()[band], 1e-12) ** 2)
    trend = np.convolve(log_spec, np.full(9, 1.0 / 9.0), mode="same")
    log_spec = log_spec - trend
    denom = float(np.dot(log_spec, log_spec))
    if denom <= 0.0:
        return 0.0
    bin_width = fmt.sample_rate / fmt.frame_len
    lag_lo = max(int(round(HARMONIC_LAG_HZ[0] / bin_width)), 1)
    lag_hi = max(int(round(HARMONIC_LAG_HZ[1] / bin_width)), lag_lo + 1)
    best = 0.0
    for lag in range(lag_lo, lag_hi + 1):
        r = float(np.dot(log_spec[:-lag], log_spec[lag:])) / denom
        best = max(best, r)
    return best


def suppress_nonstationary(
    bins: np.ndarray,
    profile: NoiseProfile,
    enabled: bool = True,
    base_gains: np.ndarray | None = None,
    fmt: AudioFormat | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Harsher suppression for bursts without harmonic support.

    Frames whose spectrum shows an 80-400 Hz harmonic ridge are speech and
    pass whatever base_gains the stationary stage produced. A frame without
    one cannot contain speech, so speech presence is zero by definition and
    the presence-squared scaling sends every bin to the tighter -25 dB
    floor; a click or clatter burst then loses the burst advantage that
    lets it punch through the Wiener rule. Disabled, this is exactly the
    stationary-only path.
    """
    bins = np.asarray(bins).ravel()
    fmt = fmt or AudioFormat()
    if base_gains is None:
        base_gains = np.ones(len(bins))
    if not enabled or profile.frames_seen < PROFILE_WARMUP_FRAMES:
        return bins, base_gains
    score = profile.harmonicity_smooth
    if score is None:
        score = harmonicity(np.abs(bins), fmt)
    if score >= HARMONICITY_THRESHOLD:
        return bins, base_gains
    tightened = np.minimum(base_gains, db_to_lin(NONSTATIONARY_FLOOR_DB))
    # base_gains are pre-suppression ratios; output bins carry them already,
    # so apply only the extra attenuation on top.
    extra = tightened / np.maximum(base_gains, 1e-12)
    return bins * extra, tightened


class TransientSuppressor:
    """Limits how fast the output spectrum may jump upward.

    A spectral-flux detector (upward log-magnitude flux above
    TRANSIENT_FLUX_RATIO times its rolling one-second median) marks an
    event; for at most TRANSIENT_MAX_FRAMES the per-bin output magnitude
    may not exceed the previous frame's output by more than
    TRANSIENT_MAX_RISE_DB. Flux spikes in frames with harmonic support are
    voiced onsets, not transients, and never trigger. The detector must
    drop below the threshold again before it can fire a new event.
    """

    def __init__(self, fmt: AudioFormat | None = None):
        self.fmt = fmt or AudioFormat()
        self._prev_log_mags: np.ndarray | None = None
        self._prev_out_mags: np.ndarray | None = None
        self._flux_history: list[float] = []
        self._event_frames = 0
        self._armed = True
        self._own_harm: float | None = None
        self.fired_frames = 0
        self.total_frames = 0

    def _flux(self, log_mags: np.ndarray) -> float:
        if self._prev_log_mags is None:
            return 0.0
        return float(np.sum(np.maximum(log_mags - self._prev_log_mags, 0.0)))

    def process(
        self,
        mags: np.ndarray,
        gains: np.ndarray,
        harmonic_score: float | None = None,
    ) -> np.ndarray:
        """Return gains adjusted so the output envelope cannot step up hard."""
        self.total_frames += 1
        log_mags = np.log(np.maximum(mags, 1e-7))
        flux = self._flux(log_mags)
        median = float(np.median(self._flux_history)) if self._flux_history else 0.0
        self._flux_history.append(flux)
        if len(self._flux_history) > TRANSIENT_MEDIAN_FRAMES:
            self._flux_history.pop(0)

        if harmonic_score is None:
            score = harmonicity(mags, self.fmt)
            self._own_harm = (
                score
                if self._own_harm is None
                else (1.0 - HARMONICITY_SMOOTH_ALPHA) * self._own_harm
                + HARMONICITY_SMOOTH_ALPHA * score
            )
            harmonic_score = self._own_harm

        triggered = (
            median > 0.0
            and flux > TRANSIENT_FLUX_RATIO * median
            and harmonic_score < HARMONICITY_THRESHOLD
        )
        if triggered and self._armed and self._event_frames == 0:
            self._event_frames = TRANSIENT_MAX_FRAMES
            self._armed = False
        if not triggered:
            self._armed = True

        out_gains = gains
        if self._event_frames > 0 and self._prev_out_mags is not None:
            self._event_frames -= 1
            self.fired_frames += 1
            allowed = self._prev_out_mags * db_to_lin(TRANSIENT_MAX_RISE_DB) + 1e-9
            clamp = np.where(
                mags * gains > allowed, allowed / np.maximum(mags, 1e-12), gains
            )
            out_gains = np.minimum(gains, clamp)
        elif self._event_frames > 0:
            self._event_frames -= 1

        self._prev_log_mags = log_mags
        self._prev_out_mags = mags * out_gains
        return out_gains


def suppress_transients(frames: list[np.ndarray]) -> list[np.ndarray]:
    """Batch form of the step limiter over a sequence of spectral frames."""
    limiter = TransientSuppressor()
    out = []
    for bins in frames:
        bins = np.asarray(bins).ravel()
        mags = np.abs(bins)
        gains = limiter.process(mags, np.ones(len(bins)))
        out.append(bins * gains)
    return out


def insert_comfort_noise(
    bins: np.ndarray,
    applied_gains: np.ndarray,
    profile: NoiseProfile,
    enabled: bool,
    rng: np.random.Generator,
    floor_db: float,
    lift_cap: bool = False,
) -> np.ndarray:
    """Refill bins that were gated to the floor with shaped noise.

    Refill level is the noise PSD minus 15 dB with random phase. Unless
    lift_cap is set (frames silenced by the level gate, which have no
    pre-suppression content to cap against), a refilled bin never exceeds
    its pre-suppression magnitude.
    """
    bins = np.asarray(bins).ravel()
    if not enabled:
        return bins
    at_floor = applied_gains <= db_to_lin(floor_db) * 1.001
    if not np.any(at_floor):
        return bins
    refill = np.sqrt(profile.psd_estimate[at_floor]) * db_to_lin(COMFORT_OFFSET_DB)
    if not lift_cap:
        pre = np.abs(bins[at_floor]) / np.maximum(applied_gains[at_floor], 1e-12)
        refill = np.minimum(refill, pre)
    phase = rng.uniform(0.0, 2.0 * np.pi, size=int(np.sum(at_floor)))
    out = bins.copy()
    out[at_floor] = refill * np.exp(1j * phase)
    return out


def aec_threshold_gate(
    frame: np.ndarray, level_dbfs: float, threshold_dbfs: float
) -> np.ndarray:
    """Silence the frame when its level is strictly below the threshold."""
    if not -90.0 <= threshold_dbfs <= 0.0:
        raise ValueError("threshold must be in [-90, 0] dBFS")
    if level_dbfs < threshold_dbfs:
        return np.zeros_like(frame)
    return frame


def aec_process(
    state: EchoCancellerState,
    mic_bins: np.ndarray,
    far_bins: np.ndarray,
    fmt: AudioFormat | None = None,
) -> tuple[np.ndarray, EchoCancellerState]:
    """Subtract the predicted echo of the far-end feed from the mic path.

    Echo is predicted per bin from the last AEC_BLOCKS far-end frames by an
    NLMS filter. Taps adapt only while the far end is active and the
    double-talk detector is quiet. The detector watches the error-to-mic
    power ratio against its own slowly rising minimum: once the canceller
    has converged the ratio sits low, and a sudden jump means the mic picked
    up something the reference cannot explain, i.e. near-end speech. A hold
    counter keeps adaptation frozen through the tail of an overlap.
    """
    fmt = fmt or AudioFormat()
    mic = np.asarray(mic_bins, dtype=np.complex128).ravel()
    far = np.asarray(far_bins, dtype=np.complex128).ravel()
    if mic.shape != far.shape:
        raise ValueError("mic/reference length mismatch")

    state.far_history = np.roll(state.far_history, 1, axis=0)
    state.far_history[0] = far

    echo_hat = np.sum(state.filter_taps * state.far_history, axis=0)
    err = mic - echo_hat

    far_active = bins_rms_dbfs(state.far_history, fmt) > AEC_FAR_ACTIVE_DBFS
    if far_active:
        mic_energy = float(np.sum(np.abs(mic) ** 2))
        err_energy = float(np.sum(np.abs(err) ** 2))
        ratio = err_energy / max(mic_energy, 1e-30)
        if ratio > AEC_DIVERGE_RATIO:
            # The subtraction added sound the mic never carried: the taps
            # are stale or blown up. Bleed them off instead of adapting;
            # a healthy filter never lands here, since with no echo
            # estimate at all the error merely equals the mic.
            state.filter_taps = state.filter_taps * AEC_DIVERGE_DECAY
            err = mic - np.sum(state.filter_taps * state.far_history, axis=0)
            return err, state
        converged = state.ratio_floor < AEC_DT_CONVERGED
        if converged and ratio > AEC_DT_RATIO * state.ratio_floor:
            state.double_talk_hold = AEC_HOLD_FRAMES
        elif state.double_talk_hold > 0:
            state.double_talk_hold -= 1
        else:
            state.ratio_floor = min(ratio, state.ratio_floor * AEC_RATIO_RELEASE)
        if state.double_talk_hold == 0:
            norm = np.sum(np.abs(state.far_history) ** 2, axis=0)
            # Bins the reference barely excites (a voice's inter-harmonic
            # valleys) would otherwise divide by ~0 and blow the taps up on
            # whatever near-end sound lands there.
            norm = norm + AEC_NORM_FLOOR * float(np.mean(norm)) + 1e-10
            state.filter_taps = state.filter_taps + (
                state.step_size * err * np.conj(state.far_history) / norm
            )
    return err, state


def agc(
    frame: np.ndarray,
    gain_db: float,
    enabled: bool = True,
    hop_duration: float = 0.016,
) -> tuple[np.ndarray, float]:
    """Slow gain ride toward the target speech level, plus a hard limiter.

    Gain rises at most AGC_RAISE_DB_PER_S and falls at most
    AGC_DROP_DB_PER_S; it freezes entirely below the silence floor so
    pauses do not pump. The limiter clips at LIMITER_CEILING_DBFS.
    """
    if not enabled:
        return frame, gain_db
    level = rms_dbfs(frame)
    if level >= AGC_FREEZE_BELOW_DBFS:
        err = AGC_TARGET_DBFS - (level + gain_db)
        step = np.clip(
            err, -AGC_DROP_DB_PER_S * hop_duration, AGC_RAISE_DB_PER_S * hop_duration
        )
        gain_db += float(step)
    ceiling = db_to_lin(LIMITER_CEILING_DBFS)
    out = np.clip(frame * db_to_lin(gain_db), -ceiling, ceiling)
    return out, gain_db


class EnhancementChain:
    """Feature-switchable post-filter over the beamformer's spectral frames.

    process() consumes one single-channel spectral frame per hop (plus the
    matching far-end reference frame when echo cancellation is in use) and
    returns one hop of time-domain output. All state lives here and is
    advanced only by process(), so a control thread may swap self.tuning
    between calls without locking.
    """

    def __init__(
        self,
        fmt: AudioFormat | None = None,
        tuning: TuningState | None = None,
        seed: int = 0,
    ):
        self.fmt = fmt or AudioFormat()
        self.tuning = tuning or TuningState()
        self.noise = NoiseProfile.empty(self.fmt)
        self.aec = EchoCancellerState.fresh(self.fmt)
        self.transient = TransientSuppressor(self.fmt)
        self.agc_gain_db = 0.0
        self._main_istft = StreamingIstft(self.fmt)
        self._post_stft = StreamingStft(self.fmt, channels=1)
        self._post_istft = StreamingIstft(self.fmt)
        self._hp_zi: np.ndarray | None = None
        self._rng = np.random.default_rng(seed)
        # spectral power entering/leaving the echo canceller on the last
        # hop that had a far-end frame; the ratio is an ERLE estimate on
        # echo-only material
        self.last_aec_powers: tuple[float, float] | None = None

    @property
    def spectral_stage_active(self) -> bool:
        t = self.tuning
        return (
            t.stationary_ns_enabled
            or t.nonstationary_ns_enabled
            or t.transient_suppression_enabled
            or t.comfort_noise_enabled
        )

    def process(
        self, beam_bins: np.ndarray, far_bins: np.ndarray | None = None
    ) -> np.ndarray:
        t = self.tuning
        bins = np.asarray(beam_bins, dtype=np.complex128).ravel()

        self.last_aec_powers = None
        if far_bins is not None:
            before = float(np.sum(np.abs(bins) ** 2))
            if t.aec_enabled:
                bins, self.aec = aec_process(self.aec, bins, far_bins, self.fmt)
            self.last_aec_powers = (before, float(np.sum(np.abs(bins) ** 2)))

        hop = self._main_istft.push(bins)

        gate_fired = False
        if t.aec_enabled:
            level = rms_dbfs(hop)
            gated = aec_threshold_gate(hop, level, t.aec_threshold)
            gate_fired = gated is not hop and level < t.aec_threshold
            hop = gated

        if t.highpass_enabled:
            hop, self._hp_zi = highpass(hop, self._hp_zi, self.fmt.sample_rate)

        if self.spectral_stage_active:
            hop = self._spectral_stage(hop, gate_fired)

        out, self.agc_gain_db = agc(
            hop, self.agc_gain_db, t.agc_enabled, self.fmt.hop_duration
        )
        return out

    def _spectral_stage(self, hop: np.ndarray, gate_fired: bool) -> np.ndarray:
        t = self.tuning
        pre = self._post_stft.push(hop[np.newaxis, :]).bins[0]
        mags = np.abs(pre)
        if not gate_fired:
            update_noise_profile(self.noise, pre, self.fmt)

        gains = np.ones(len(pre))
        floor_db = STATIONARY_FLOOR_DB
        if t.stationary_ns_enabled:
            _, gains = suppress_stationary(pre, self.noise)
        if t.nonstationary_ns_enabled:
            _, gains = suppress_nonstationary(
                pre, self.noise, True, gains, self.fmt
            )
            if np.any(gains < db_to_lin(STATIONARY_FLOOR_DB) * 0.999):
                floor_db = NONSTATIONARY_FLOOR_DB
        if t.transient_suppression_enabled:
            gains = self.transient.process(mags, gains, self.noise.harmonicity_smooth)

        out_bins = pre * gains
        if t.comfort_noise_enabled and (
            t.stationary_ns_enabled or t.nonstationary_ns_enabled or gate_fired
        ):
            out_bins = insert_comfort_noise(
                out_bins,
                gains,
                self.noise,
                True,
                self._rng,
                floor_db,
                lift_cap=gate_fired,
            )
        return self._post_istft.push(out_bins)
