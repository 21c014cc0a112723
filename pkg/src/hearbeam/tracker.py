"""Multi-source tracking and lead-speaker selection.

Keeps a stable identity per talker from the per-frame direction estimates,
averages each talker's detected power, and decides where the beam should
point: normally the loudest tracked voice, with switch hysteresis so
overlapping speech does not thrash the beam, or a manually pinned track
when the user overrides.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from hearbeam.dsp import AudioFormat
from hearbeam.localization import SourceEstimate, circular_distance, smooth_azimuth

ASSOCIATION_GATE_DEG = 15.0
GATE_GROWTH_DEG_PER_S = 12.0  # a talker can keep walking while silent
MAX_ASSOCIATION_GATE_DEG = 40.0
BIRTH_EXCLUSION_DEG = 25.0  # no new track this close to an existing one
BIRTH_CONFIDENCE = 0.3
UPDATE_CONFIDENCE = 0.15  # estimates below this never touch a track
AZIMUTH_ALPHA = 0.3
POWER_ALPHA = 0.1
DEACTIVATE_AFTER_S = 1.0
DELETE_AFTER_S = 5.0
SWITCH_MARGIN_DB = 3.0
SWITCH_HANGOVER_S = 0.4


@dataclass
class SourceTrack:
    """One tracked talker; id is never reused within a session."""

    id: int
    azimuth: float
    mean_power: float
    active: bool = True
    last_seen: int = 0
    born: int = 0
    confidence: float = 0.0  # detector confidence at the last match


@dataclass
class SelectionState:
    """Which track the beam follows and why.

    challenger fields carry the hysteresis timer: a louder rival must hold
    its margin continuously before it may take over.
    """

    selected_id: int | None = None
    since: int = 0
    mode: str = "automatic"
    challenger_id: int | None = None
    challenger_since: int = 0


@dataclass
class SelectionChange:
    """Telemetry payload for one selection decision."""

    frame_index: int
    selected_id: int | None
    mode: str
    retarget: bool


def _power_db(power: float) -> float:
    return 10.0 * math.log10(max(power, 1e-30))


def associate(
    tracks: list[SourceTrack],
    estimates: list[SourceEstimate],
    frame: int,
    fmt: AudioFormat | None = None,
    next_id: int | None = None,
    birth_candidates: int | None = None,
) -> tuple[list[SourceTrack], int]:
    """Match estimates to tracks, spawn births, retire stale tracks.

    Greedy by ascending angular distance inside a 15 degree gate; at four
    or fewer concurrent sources this matches the optimal assignment.
    Returns the surviving tracks and the next unused id. When next_id is
    None it continues above the largest id present.

    birth_candidates limits which estimates may spawn tracks: only the
    first N in the caller's order, which is dominance order as produced by
    peak extraction (None means all). Callers facing reverberant input use
    1 so sidelobes and reflections, which are never the dominant peak while
    the real talker is live, cannot mint identities; they can still update
    an existing track they fall near.
    """
    fmt = fmt or AudioFormat()
    if next_id is None:
        next_id = max((t.id for t in tracks), default=-1) + 1

    usable = [e for e in estimates if e.confidence >= UPDATE_CONFIDENCE]
    # The gate widens with time unseen: a talker who fell silent may have
    # kept moving, and recapture must beat re-birth for identity to hold.
    gates = [
        min(
            ASSOCIATION_GATE_DEG
            + GATE_GROWTH_DEG_PER_S * (frame - t.last_seen) * fmt.hop_duration,
            MAX_ASSOCIATION_GATE_DEG,
        )
        for t in tracks
    ]
    pairs = sorted(
        (
            (circular_distance(t.azimuth, e.azimuth), ti, ei)
            for ti, t in enumerate(tracks)
            for ei, e in enumerate(usable)
        ),
        key=lambda p: p[0],
    )
    matched_t: set[int] = set()
    matched_e: set[int] = set()
    for dist, ti, ei in pairs:
        if dist > MAX_ASSOCIATION_GATE_DEG:
            break
        if dist > gates[ti]:
            continue
        if ti in matched_t or ei in matched_e:
            continue
        matched_t.add(ti)
        matched_e.add(ei)
        t, e = tracks[ti], usable[ei]
        t.azimuth = smooth_azimuth(t.azimuth, e.azimuth, AZIMUTH_ALPHA)
        t.mean_power = (1.0 - POWER_ALPHA) * t.mean_power + POWER_ALPHA * e.power
        t.last_seen = frame
        t.active = True
        t.confidence = e.confidence

    if birth_candidates is None:
        birth_ok = set(range(len(usable)))
    else:
        birth_ok = set(range(min(birth_candidates, len(usable))))
    for ei, e in enumerate(usable):
        if ei in matched_e or ei not in birth_ok or e.confidence < BIRTH_CONFIDENCE:
            continue
        # A peak this close to a live track is its sidelobe or reverb
        # satellite, not a separable new source; two talkers nearer than
        # this never resolve as distinct peaks anyway.
        if any(
            circular_distance(t.azimuth, e.azimuth) < BIRTH_EXCLUSION_DEG
            for t in tracks
        ):
            continue
        tracks.append(
            SourceTrack(
                id=next_id,
                azimuth=e.azimuth,
                mean_power=e.power,
                last_seen=frame,
                born=frame,
                confidence=e.confidence,
            )
        )
        next_id += 1

    survivors = []
    for t in tracks:
        unseen_s = (frame - t.last_seen) * fmt.hop_duration
        if unseen_s > DELETE_AFTER_S:
            continue
        if unseen_s > DEACTIVATE_AFTER_S:
            t.active = False
        survivors.append(t)

    # Two tracks converging inside the gate are one source; a moving talker
    # must be able to walk through a stale track without losing identity.
    # The older id absorbs the newer one.
    merged: list[SourceTrack] = []
    for t in sorted(survivors, key=lambda t: (t.born, t.id)):
        home = next(
            (
                m
                for m in merged
                if circular_distance(m.azimuth, t.azimuth) <= ASSOCIATION_GATE_DEG
            ),
            None,
        )
        if home is None:
            merged.append(t)
            continue
        if t.last_seen > home.last_seen:
            home.azimuth = t.azimuth
            home.last_seen = t.last_seen
            home.confidence = t.confidence
        home.mean_power = max(home.mean_power, t.mean_power)
        home.active = home.active or t.active
    merged.sort(key=lambda t: t.id)
    return merged, next_id


def select_lead(
    tracks: list[SourceTrack],
    selection: SelectionState,
    frame: int,
    manual_id: int | None = None,
    fmt: AudioFormat | None = None,
    margin_db: float = SWITCH_MARGIN_DB,
    hangover_s: float = SWITCH_HANGOVER_S,
) -> SelectionState:
    """Advance the lead-speaker decision by one frame.

    Manual override pins its track regardless of power for as long as the
    track exists; a vanished or absent override falls back to automatic.
    Automatic mode keeps the incumbent until a rival exceeds its averaged
    power by SWITCH_MARGIN_DB continuously for SWITCH_HANGOVER_S, or until
    the incumbent goes silent and an active rival is available.
    """
    fmt = fmt or AudioFormat()
    by_id = {t.id: t for t in tracks}

    if manual_id is not None and manual_id in by_id:
        if selection.mode == "manual" and selection.selected_id == manual_id:
            return selection
        return SelectionState(selected_id=manual_id, since=frame, mode="manual")

    active = [t for t in tracks if t.active]
    incumbent = by_id.get(selection.selected_id)
    if selection.mode == "manual":
        # override released (or its track died): start over automatically
        incumbent = None
        selection = SelectionState()

    if incumbent is not None and not incumbent.active and not active:
        return selection  # everyone silent: hold the last talker
    if incumbent is None or not incumbent.active:
        pool = active if active else tracks
        if not pool:
            return SelectionState() if selection.selected_id is not None else selection
        lead = max(pool, key=lambda t: t.mean_power)
        if lead.id != selection.selected_id:
            return SelectionState(selected_id=lead.id, since=frame)
        return replace(selection, challenger_id=None)

    rivals = [t for t in active if t.id != incumbent.id]
    if not rivals:
        return replace(selection, challenger_id=None)
    best = max(rivals, key=lambda t: t.mean_power)
    if _power_db(best.mean_power) - _power_db(incumbent.mean_power) < margin_db:
        return replace(selection, challenger_id=None)
    if selection.challenger_id != best.id:
        return replace(selection, challenger_id=best.id, challenger_since=frame)
    held_s = (frame - selection.challenger_since) * fmt.hop_duration
    if held_s >= hangover_s:
        return SelectionState(selected_id=best.id, since=frame)
    return selection


def tracker_argmax_invariance_probe(
    tracks: list[SourceTrack], scale: float
) -> int | None:
    """Automatic pick after scaling every track's power by a common factor.

    Selection depends only on power ratios, so any positive scale must
    return the same id; exposed so that can be asserted from outside.
    """
    if scale <= 0.0:
        raise ValueError("scale must be positive")
    scaled = [replace(t, mean_power=t.mean_power * scale) for t in tracks]
    state = select_lead(scaled, SelectionState(), frame=0)
    return state.selected_id


class SourceTracker:
    """Owns track identity and lead selection across a run.

    Single-threaded by design: the pipeline thread calls update() once per
    frame; a manual override arrives as a value read from the tuning state
    that frame.
    """

    def __init__(
        self,
        fmt: AudioFormat | None = None,
        margin_db: float = SWITCH_MARGIN_DB,
        hangover_s: float = SWITCH_HANGOVER_S,
        birth_candidates: int | None = None,
    ):
        self.fmt = fmt or AudioFormat()
        self.margin_db = margin_db
        self.hangover_s = hangover_s
        self.birth_candidates = birth_candidates
        self.tracks: list[SourceTrack] = []
        self.selection = SelectionState()
        self.next_id = 0
        self.switch_count = 0
        self.changes: list[SelectionChange] = []

    def update(
        self,
        estimates: list[SourceEstimate],
        frame: int,
        manual_id: int | None = None,
        birth_candidates: int | None = None,
    ) -> SelectionState:
        if birth_candidates is None:
            birth_candidates = self.birth_candidates
        self.tracks, self.next_id = associate(
            self.tracks, estimates, frame, self.fmt, self.next_id,
            birth_candidates=birth_candidates,
        )
        before = self.selection.selected_id
        self.selection = select_lead(
            self.tracks,
            self.selection,
            frame,
            manual_id,
            self.fmt,
            self.margin_db,
            self.hangover_s,
        )
        after = self.selection.selected_id
        if after != before:
            if before is not None and after is not None:
                self.switch_count += 1
            self.changes.append(
                SelectionChange(frame, after, self.selection.mode, after is not None)
            )
        return self.selection

    def selected_track(self) -> SourceTrack | None:
        for t in self.tracks:
            if t.id == self.selection.selected_id:
                return t
        return None
