"""Per-hop orchestration: localization, tracking, beam, enhancement, mux.

One Pipeline instance owns all audio state and is driven hop by hop from
exactly one thread. Control traffic from other threads lands as a new
TuningState swapped into `tuning` between hops; telemetry leaves through
a non-blocking hub. File-mode helpers at the bottom run whole signals
through and collect the results.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from hearbeam.beamforming import Beamformer
from hearbeam.config import PipelineConfig
from hearbeam.deviceio import (
    SixChannelFrame,
    TelemetryHub,
    TelemetryRecord,
    build_telemetry,
    mux_channels,
)
from hearbeam.dsp import StreamingStft, frame_stream, rms_dbfs
from hearbeam.enhancement import EnhancementChain
from hearbeam.localization import (
    PEAK_CONFIDENCE_FLOOR,
    SourceEstimate,
    circular_distance,
    extract_peaks,
    srp_maps,
)
from hearbeam.tracker import SourceTracker

LOCALIZE_FLOOR_DBFS = -70.0  # below this the frame cannot contain usable speech
LOCALIZE_ACTIVE_DBFS = -45.0  # above this the frame is treated as live speech outright
LOCALIZE_MARGIN_DB = 6.0  # required height above the rolling level floor
LEVEL_FLOOR_WINDOW_S = 2.0  # history for the rolling minimum level
SRP_SMOOTH_ALPHA = 0.3  # per-hop EMA over the power map steadies the peaks
BIRTH_POWER_FRACTION = 0.15  # new tracks need this fraction of the recent peak power
PEAK_POWER_DECAY = 0.995  # per-hop release of the running peak, about 3 s
VOTE_SHARE_GAIN = 5.0  # a fifth of all bin votes counts as full confidence
MIN_VOTE_SHARE = 0.04  # broadband confidence needs this much vote backing


@dataclass
class HopResult:
    """Everything produced for one input hop."""

    six: SixChannelFrame
    telemetry: TelemetryRecord
    selected_azimuth: float | None
    aec_powers: tuple[float, float] | None = None  # canceller in/out, far-end hops only


@dataclass
class RunResult:
    """Collected outputs of a file-mode run."""

    processed: np.ndarray  # (n,) ch0
    six: np.ndarray  # (6, n)
    records: list[TelemetryRecord]
    switch_count: int
    retarget_count: int
    latency_samples: int
    aec_powers: list[tuple[float, float] | None] = field(default_factory=list)
    config: PipelineConfig | None = field(repr=False, default=None)


class Pipeline:
    def __init__(
        self,
        config: PipelineConfig | None = None,
        seed: int = 0,
        hub: TelemetryHub | None = None,
    ):
        self.config = config or PipelineConfig()
        fmt = self.config.fmt
        self.fmt = fmt
        self.tuning = self.config.tuning
        self.stft = StreamingStft(fmt)
        self.far_stft = StreamingStft(fmt, channels=1)
        self.beam = Beamformer(self.config.geometry, fmt)
        self.chain = EnhancementChain(fmt, self.tuning, seed=seed)
        self.tracker = SourceTracker(
            fmt, self.config.switch_margin_db, self.config.switch_hangover_s
        )
        self.hub = hub
        self.frame_index = 0
        self.retarget_count = 0
        self._srp_smooth: np.ndarray | None = None
        self._vote_smooth: np.ndarray | None = None
        # Localization guards. The first hops see a half-filled analysis
        # window; reverb tails and noise beds produce confident peaks at
        # reflection azimuths. Skip the warmup, gate on level above a rolling
        # floor, and let only a dominant peak near the recent peak power mint
        # new tracks.
        self._warmup_hops = fmt.frame_len // fmt.hop_len
        self._recent_levels: deque[float] = deque(
            maxlen=max(1, int(round(LEVEL_FLOOR_WINDOW_S / fmt.hop_duration)))
        )
        self._peak_power = 0.0

    @property
    def latency_samples(self) -> int:
        """Input-to-ch0 delay at the current tuning."""
        extra = self.fmt.frame_len - self.fmt.hop_len
        if self.chain.spectral_stage_active:
            return self.fmt.hop_len + extra
        return self.fmt.hop_len

    def _estimates_from_maps(self) -> list[SourceEstimate]:
        """Peak positions from the vote map, scored with both maps.

        Vote peaks stay on individual talkers during overlap, but a vote
        map is sparse: its median is near zero, so the usual peak-vs-median
        confidence is meaningless computed on it. Confidence is instead the
        larger of the scaled vote share and the broadband peak-vs-median
        score; power is always the broadband value at the peak azimuth.
        """
        peaks = extract_peaks(
            self._vote_smooth,
            self.config.grid,
            frame_index=self.frame_index,
            confidence_floor=0.0,
        )
        broad = self._srp_smooth
        median = float(np.median(broad))
        total_votes = float(self._vote_smooth.sum())
        res = self.config.grid.resolution
        out = []
        for p in peaks:
            cell = int(round(p.azimuth / res)) % len(broad)
            power = float(broad[cell])
            if power <= 0.0:
                continue
            share = (
                float(self._vote_smooth[cell]) / total_votes
                if total_votes > 0.0
                else 0.0
            )
            vote_conf = min(VOTE_SHARE_GAIN * share, 1.0)
            # A quiet talker's broadband value sinks to the map median while
            # their bins still vote coherently, so vote share keeps the peak
            # alive. The converse also holds: the broadband ridge shoulder
            # of a loud talker scores well against the median yet wins
            # almost no votes, and trusting it would drag tracks off
            # source. Broadband confidence therefore only counts for peaks
            # with real vote backing.
            broad_conf = min(max((power - median) / power, 0.0), 1.0)
            conf = max(vote_conf, broad_conf) if share >= MIN_VOTE_SHARE else vote_conf
            if conf < PEAK_CONFIDENCE_FLOOR:
                continue
            out.append(SourceEstimate(p.azimuth, power, conf, self.frame_index))
        # keep vote-dominance order: births follow it, and broadband ridge
        # shoulders must not outrank the sharp vote modes
        return out

    def _localize_gate(self) -> float:
        """Level a hop must clear before it is worth localizing."""
        if len(self._recent_levels) < (self._recent_levels.maxlen or 1):
            return LOCALIZE_ACTIVE_DBFS
        floor = min(self._recent_levels)
        return max(
            LOCALIZE_FLOOR_DBFS,
            min(floor + LOCALIZE_MARGIN_DB, LOCALIZE_ACTIVE_DBFS),
        )

    def process_hop(
        self, mic_hop: np.ndarray, far_hop: np.ndarray | None = None
    ) -> HopResult:
        """Advance the whole pipeline by one hop of mic (and far-end) audio."""
        tuning = self.tuning  # one read per hop; control swaps between hops
        mic_hop = np.asarray(mic_hop, dtype=np.float64)
        spectral = self.stft.push(mic_hop)
        far_bins = None
        if far_hop is not None:
            far_bins = self.far_stft.push(
                np.asarray(far_hop, dtype=np.float64)[np.newaxis, :]
            ).bins[0]

        input_dbfs = rms_dbfs(mic_hop)
        self._recent_levels.append(input_dbfs)
        self._peak_power *= PEAK_POWER_DECAY
        estimates = []
        birth_candidates = 0
        if self.frame_index >= self._warmup_hops and input_dbfs > self._localize_gate():
            broad, votes = srp_maps(spectral, self.config.geometry, self.config.grid)
            if self._srp_smooth is None:
                self._srp_smooth = broad
                self._vote_smooth = votes
            else:
                a = SRP_SMOOTH_ALPHA
                self._srp_smooth = (1.0 - a) * self._srp_smooth + a * broad
                self._vote_smooth = (1.0 - a) * self._vote_smooth + a * votes
            estimates = self._estimates_from_maps()
            if estimates:
                self._peak_power = max(
                    self._peak_power, max(e.power for e in estimates)
                )
                if estimates[0].power >= BIRTH_POWER_FRACTION * self._peak_power:
                    birth_candidates = 1
        selection = self.tracker.update(
            estimates,
            self.frame_index,
            manual_id=tuning.manual_source_id,
            birth_candidates=birth_candidates,
        )

        lead = self.tracker.selected_track()
        if lead is not None and (
            circular_distance(self.beam.azimuth, lead.azimuth)
            > self.config.retarget_threshold_deg
        ):
            self.beam.retarget(lead.azimuth)
            self.retarget_count += 1

        beam_bins = self.beam.process(spectral)
        self.chain.tuning = tuning
        out_hop = self.chain.process(beam_bins, far_bins)
        six = mux_channels(out_hop, mic_hop)

        record = build_telemetry(
            self.frame_index,
            self.tracker.tracks,
            selection.selected_id,
            selection.mode,
            input_dbfs,
            rms_dbfs(out_hop),
            tuning,
        )
        if self.hub is not None:
            self.hub.publish(record)
        self.frame_index += 1
        return HopResult(
            six, record, record.selected_azimuth, self.chain.last_aec_powers
        )


def run_file_pipeline(
    mic: np.ndarray,
    far: np.ndarray | None = None,
    config: PipelineConfig | None = None,
    seed: int = 0,
    hub: TelemetryHub | None = None,
) -> RunResult:
    """Run a whole multichannel recording through a fresh pipeline."""
    config = config or PipelineConfig()
    pipe = Pipeline(config, seed=seed, hub=hub)
    latency = pipe.latency_samples
    mic = np.atleast_2d(np.asarray(mic, dtype=np.float64))
    if mic.shape[0] != config.fmt.channels:
        raise ValueError(
            f"expected {config.fmt.channels} mic channels, got {mic.shape[0]}"
        )
    if far is not None:
        far = np.asarray(far, dtype=np.float64).ravel()
        if len(far) < mic.shape[1]:
            far = np.pad(far, (0, mic.shape[1] - len(far)))

    frames = frame_stream(list(mic), config.fmt)
    hop = config.fmt.hop_len
    results = []
    for i, fr in enumerate(frames):
        fhop = far[i * hop : (i + 1) * hop] if far is not None else None
        if fhop is not None and len(fhop) < hop:
            fhop = np.pad(fhop, (0, hop - len(fhop)))
        results.append(pipe.process_hop(fr.samples, fhop))

    six = (
        np.concatenate([r.six.samples for r in results], axis=1)
        if results
        else np.zeros((6, 0))
    )
    return RunResult(
        processed=six[0],
        six=six,
        records=[r.telemetry for r in results],
        switch_count=pipe.tracker.switch_count,
        retarget_count=pipe.retarget_count,
        latency_samples=latency,
        aec_powers=[r.aec_powers for r in results],
        config=config,
    )
