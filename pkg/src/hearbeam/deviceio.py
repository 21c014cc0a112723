"""Device-facing contracts: six-channel output, LED ring, control wire.

The audio pipeline talks to the outside world through three surfaces that
all live here: the six-channel USB-style frame layout, the 12-segment LED
ring that points at the selected talker, and the newline-delimited JSON
control/telemetry protocol shared by the TCP socket and the WebSocket.
One message in, exactly one reply out; telemetry is fan-out with a
bounded per-subscriber buffer so a stalled viewer can never stall audio.
"""

from __future__ import annotations

import json
import threading
from collections import deque
from dataclasses import dataclass, replace
from typing import Any

import numpy as np

from hearbeam.enhancement import TuningState
from hearbeam.localization import unit_sphere_point
from hearbeam.tracker import SourceTrack

LED_COUNT = 12
LED_SECTOR_DEG = 360.0 / LED_COUNT
LED_NEIGHBOR_INTENSITY = 0.25
TELEMETRY_BUFFER_RECORDS = 64

BOOL_PARAMS = (
    "agc_enabled",
    "nonstationary_ns_enabled",
    "stationary_ns_enabled",
    "highpass_enabled",
    "comfort_noise_enabled",
    "transient_suppression_enabled",
    "aec_enabled",
)
RANGE_PARAMS = {"aec_threshold": (-90.0, 0.0)}
CONTROL_KINDS = ("set_param", "select_source", "clear_override", "get_state")


@dataclass
class SixChannelFrame:
    """Device output layout: processed, four raws, and their mean.

    samples rows are ch0..ch5; ch5 is the arithmetic mean of ch1..ch4 so
    the combined channel can never clip harder than its inputs.
    """

    samples: np.ndarray  # (6, hop_len)

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2 or self.samples.shape[0] != 6:
            raise ValueError(f"expected 6 channels, got shape {self.samples.shape}")

    @property
    def processed(self) -> np.ndarray:
        return self.samples[0]

    @property
    def raws(self) -> np.ndarray:
        return self.samples[1:5]

    @property
    def combined(self) -> np.ndarray:
        return self.samples[5]


def mux_channels(processed: np.ndarray, raws: np.ndarray) -> SixChannelFrame:
    """Assemble one six-channel device frame from the pipeline outputs."""
    processed = np.asarray(processed, dtype=np.float64).ravel()
    raws = np.atleast_2d(np.asarray(raws, dtype=np.float64))
    if raws.shape[0] != 4:
        raise ValueError(f"expected 4 raw channels, got {raws.shape[0]}")
    if raws.shape[1] != len(processed):
        raise ValueError(
            f"length mismatch: processed {len(processed)}, raws {raws.shape[1]}"
        )
    combined = raws.mean(axis=0)
    return SixChannelFrame(np.vstack([processed, raws, combined]))


@dataclass
class LedRingState:
    """Intensities for the 12-segment ring plus the dominant segment."""

    intensities: np.ndarray  # (12,), values in [0, 1]
    dominant_index: int | None

    def as_dict(self) -> dict[str, Any]:
        return {
            "intensities": [round(float(v), 4) for v in self.intensities],
            "dominant_index": self.dominant_index,
        }


def led_ring_state(azimuth: float | None, active: bool) -> LedRingState:
    """Point the ring at the selected talker.

    The segment nearest the azimuth lights fully, its two neighbors glow,
    everything else is dark; no selection means a dark ring.
    """
    intensities = np.zeros(LED_COUNT)
    if not active or azimuth is None:
        return LedRingState(intensities, None)
    if not 0.0 <= azimuth < 360.0:
        raise ValueError(f"azimuth {azimuth} outside [0, 360)")
    dominant = int(round(azimuth / LED_SECTOR_DEG)) % LED_COUNT
    intensities[dominant] = 1.0
    intensities[(dominant - 1) % LED_COUNT] = LED_NEIGHBOR_INTENSITY
    intensities[(dominant + 1) % LED_COUNT] = LED_NEIGHBOR_INTENSITY
    return LedRingState(intensities, dominant)


@dataclass
class ControlMessage:
    """One parsed control request from a client."""

    kind: str
    request_id: str | None = None
    name: str | None = None
    value: Any = None


class ControlParseError(ValueError):
    """Raised for messages that fail the wire grammar."""

    def __init__(self, detail: str, request_id: str | None = None):
        super().__init__(detail)
        self.request_id = request_id


def tuning_as_dict(tuning: TuningState) -> dict[str, Any]:
    d: dict[str, Any] = {name: getattr(tuning, name) for name in BOOL_PARAMS}
    d["aec_threshold"] = tuning.aec_threshold
    d["manual_source_id"] = tuning.manual_source_id
    return d


def _ack(request_id: str | None, tuning: TuningState) -> dict[str, Any]:
    return {"kind": "ack", "request_id": request_id, "state": tuning_as_dict(tuning)}


def _error(request_id: str | None, reason: str, detail: str) -> dict[str, Any]:
    return {
        "kind": "error",
        "request_id": request_id,
        "reason": reason,
        "detail": detail,
    }


def parse_control(line: str) -> ControlMessage:
    """Parse one wire line into a ControlMessage or raise ControlParseError."""
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ControlParseError(f"invalid JSON: {exc.msg}") from exc
    if not isinstance(obj, dict):
        raise ControlParseError("message must be a JSON object")
    rid = obj.get("request_id")
    if rid is not None and not isinstance(rid, str):
        raise ControlParseError("request_id must be a string", None)
    kind = obj.get("kind")
    if kind not in CONTROL_KINDS:
        raise ControlParseError(f"unknown kind {kind!r}", rid)
    name = obj.get("name")
    if name is not None and not isinstance(name, str):
        raise ControlParseError("name must be a string", rid)
    return ControlMessage(kind=kind, request_id=rid, name=name, value=obj.get("value"))


def handle_control(
    message: ControlMessage,
    tuning: TuningState,
    live_ids: frozenset[int] | set[int] = frozenset(),
) -> tuple[dict[str, Any], TuningState]:
    """Apply one control message; return (reply, possibly-new tuning).

    The input tuning is never mutated; errors return it unchanged so the
    pipeline state cannot drift on a rejected request.
    """
    rid = message.request_id
    if message.kind == "get_state":
        return _ack(rid, tuning), tuning

    if message.kind == "clear_override":
        new = replace(tuning, manual_source_id=None)
        return _ack(rid, new), new

    if message.kind == "select_source":
        value = message.value
        if isinstance(value, bool) or not isinstance(value, int):
            return _error(rid, "parse_error", "select_source needs an integer id"), tuning
        if value not in live_ids:
            return _error(rid, "no_such_source", f"no live track with id {value}"), tuning
        new = replace(tuning, manual_source_id=value)
        return _ack(rid, new), new

    # set_param
    name = message.name
    value = message.value
    if name in BOOL_PARAMS:
        if not isinstance(value, bool):
            return _error(rid, "out_of_range", f"{name} takes true or false"), tuning
        new = replace(tuning, **{name: value})
        return _ack(rid, new), new
    if name in RANGE_PARAMS:
        lo, hi = RANGE_PARAMS[name]
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            return _error(rid, "out_of_range", f"{name} takes a number"), tuning
        if not lo <= float(value) <= hi:
            return (
                _error(rid, "out_of_range", f"{name} must be in [{lo}, {hi}]"),
                tuning,
            )
        new = replace(tuning, **{name: float(value)})
        return _ack(rid, new), new
    return _error(rid, "unknown_param", f"no parameter named {name!r}"), tuning


def handle_control_line(
    line: str,
    tuning: TuningState,
    live_ids: frozenset[int] | set[int] = frozenset(),
) -> tuple[dict[str, Any], TuningState]:
    """Wire-level entry: malformed lines get an error reply, state untouched."""
    try:
        message = parse_control(line)
    except ControlParseError as exc:
        return _error(exc.request_id, "parse_error", str(exc)), tuning
    return handle_control(message, tuning, live_ids)


@dataclass
class TelemetryRecord:
    """Everything the console needs to draw one frame."""

    frame_index: int
    selected_id: int | None
    selected_azimuth: float | None
    led: LedRingState
    sources: list[dict[str, Any]]
    input_dbfs: float
    output_dbfs: float
    tuning: TuningState
    mode: str = "automatic"

    def as_dict(self) -> dict[str, Any]:
        return {
            "kind": "telemetry",
            "frame_index": self.frame_index,
            "selected_id": self.selected_id,
            "selected_azimuth": self.selected_azimuth,
            "mode": self.mode,
            "led": self.led.as_dict(),
            "sources": self.sources,
            "levels": {
                "input_dbfs": round(self.input_dbfs, 2),
                "output_dbfs": round(self.output_dbfs, 2),
            },
            "tuning": tuning_as_dict(self.tuning),
        }

    def to_line(self) -> str:
        return json.dumps(self.as_dict(), separators=(",", ":"))


def build_telemetry(
    frame_index: int,
    tracks: list[SourceTrack],
    selected_id: int | None,
    mode: str,
    input_dbfs: float,
    output_dbfs: float,
    tuning: TuningState,
) -> TelemetryRecord:
    """Snapshot tracker + levels into one wire record."""
    selected_azimuth = None
    for t in tracks:
        if t.id == selected_id:
            selected_azimuth = t.azimuth % 360.0
    sources = [
        {
            "id": t.id,
            "azimuth": round(t.azimuth % 360.0, 2),
            "power": float(t.mean_power),
            "confidence": round(float(t.confidence), 3),
            "active": t.active,
            "point": [round(c, 4) for c in unit_sphere_point(t.azimuth)],
        }
        for t in tracks
    ]
    led = led_ring_state(selected_azimuth, selected_azimuth is not None)
    return TelemetryRecord(
        frame_index=frame_index,
        selected_id=selected_id,
        selected_azimuth=(
            round(selected_azimuth, 2) if selected_azimuth is not None else None
        ),
        led=led,
        sources=sources,
        input_dbfs=input_dbfs,
        output_dbfs=output_dbfs,
        tuning=tuning,
        mode=mode,
    )


class TelemetrySubscription:
    """A bounded drop-oldest queue of telemetry lines for one consumer."""

    def __init__(self, hub: "TelemetryHub"):
        self._hub = hub
        self._records: deque[str] = deque(maxlen=TELEMETRY_BUFFER_RECORDS)
        self._lock = threading.Lock()
        self.dropped = 0

    def _offer(self, line: str) -> None:
        with self._lock:
            if len(self._records) == self._records.maxlen:
                self.dropped += 1
            self._records.append(line)

    def drain(self) -> list[str]:
        """Take everything queued so far (oldest first)."""
        with self._lock:
            out = list(self._records)
            self._records.clear()
        return out

    def close(self) -> None:
        self._hub.unsubscribe(self)


class TelemetryHub:
    """Non-blocking telemetry fan-out.

    publish() only appends to per-subscriber deques, so the pipeline
    thread's cost is O(subscribers) appends regardless of how slowly any
    consumer drains.
    """

    def __init__(self) -> None:
        self._subs: list[TelemetrySubscription] = []
        self._lock = threading.Lock()
        self.published = 0

    def subscribe(self) -> TelemetrySubscription:
        sub = TelemetrySubscription(self)
        with self._lock:
            self._subs.append(sub)
        return sub

    def unsubscribe(self, sub: TelemetrySubscription) -> None:
        with self._lock:
            if sub in self._subs:
                self._subs.remove(sub)

    def publish(self, record: TelemetryRecord | str) -> None:
        line = record if isinstance(record, str) else record.to_line()
        with self._lock:
            subs = list(self._subs)
        for sub in subs:
            sub._offer(line)
        self.published += 1
