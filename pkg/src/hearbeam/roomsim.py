"""Rectangular-room scene renderer with ground-truth labels.

Image-source impulse responses (fractional-delay pulses, 1/r spreading,
multiplicative wall losses) drive an offline renderer that turns a scenario
description into 4-channel array audio plus a per-frame ground-truth record:
true azimuth, activity and the clean source signal at the array centroid.
Moving sources get their responses re-derived on a fixed interval and
cross-faded with a triangular overlap-add, which bounds the error of
pretending the source holds still within each interval.

All preset room dimensions, distances and levels are stand-ins chosen to
match the qualitative scene descriptions they implement; none are measured.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from hearbeam.dsp import AudioFormat, _sinc_kernel, db_to_lin, rms_dbfs
from hearbeam.localization import ArrayGeometry, wrap_degrees
from hearbeam.signals import make_noise, synth_voice, white_noise
from hearbeam.wavio import read_wav

SPEED_OF_SOUND = 343.0
RIR_UPDATE_INTERVAL_S = 0.25
DEFAULT_MAX_ORDER = 6
_KERNEL_TAPS = 64
_WALL_MARGIN = 0.05

PRESET_NAMES = ("sitting_room", "cafeteria", "lecture_hall")


@dataclass(frozen=True)
class ArrayPose:
    """Device position and heading in the room frame."""

    position: tuple[float, float, float]
    yaw_deg: float = 0.0

    def mic_positions(self, geometry: ArrayGeometry) -> np.ndarray:
        yaw = math.radians(self.yaw_deg)
        rot = np.array(
            [
                [math.cos(yaw), -math.sin(yaw), 0.0],
                [math.sin(yaw), math.cos(yaw), 0.0],
                [0.0, 0.0, 1.0],
            ]
        )
        offsets = np.asarray(geometry.mic_positions, dtype=np.float64)
        return np.asarray(self.position, dtype=np.float64) + offsets @ rot.T


@dataclass(frozen=True)
class SourceSpec:
    """One emitting source: what it plays and where it is over time.

    trajectory is a tuple of (time_s, x, y, z) waypoints, piecewise-linear
    in between, clamped outside the first/last times. A single waypoint is
    a static source.
    """

    name: str
    trajectory: tuple[tuple[float, float, float, float], ...]
    gain_db: float = 0.0
    kind: str = "voice"  # voice | noise | tone | wav
    wav_path: str | None = None
    pitch_hz: float = 120.0
    far_end_reference: bool = False

    def __post_init__(self) -> None:
        if not self.trajectory:
            raise ValueError("trajectory needs at least one waypoint")
        times = [w[0] for w in self.trajectory]
        if sorted(times) != times:
            raise ValueError("trajectory waypoints must be time-ordered")

    def position_at(self, t: float) -> np.ndarray:
        way = np.asarray(self.trajectory, dtype=np.float64)
        return np.array(
            [np.interp(t, way[:, 0], way[:, 1 + d]) for d in range(3)]
        )

    @property
    def is_static(self) -> bool:
        first = self.trajectory[0][1:]
        return all(w[1:] == first for w in self.trajectory)


@dataclass(frozen=True)
class NoiseBed:
    """Diffuse room noise: uncorrelated across channels at a set level."""

    kind: str  # stationary | nonstationary
    level_dbfs: float
    generator: str = "white"

    def __post_init__(self) -> None:
        if self.kind not in ("stationary", "nonstationary"):
            raise ValueError(f"unknown noise bed kind {self.kind!r}")


@dataclass(frozen=True)
class Scenario:
    room: tuple[float, float, float]
    absorption: float | tuple[float, ...]
    array_pose: ArrayPose
    sources: tuple[SourceSpec, ...]
    noise_beds: tuple[NoiseBed, ...] = ()
    duration: float = 10.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        for alpha in np.atleast_1d(np.asarray(self.absorption, dtype=np.float64)):
            if not 0.0 < alpha <= 1.0:
                raise ValueError("absorption must be in (0, 1]")
        _require_inside(self.room, self.array_pose.position, "array")
        for spec in self.sources:
            for way in spec.trajectory:
                _require_inside(self.room, way[1:], spec.name)


@dataclass
class GroundTruth:
    """Per-frame labels on the same hop clock as the rendered audio."""

    frame_rate: float
    names: tuple[str, ...]
    azimuths: np.ndarray  # (n_sources, n_frames) degrees, device frame
    active: np.ndarray  # (n_sources, n_frames) bool
    distances: np.ndarray  # (n_sources, n_frames) horizontal range, meters
    clean: np.ndarray  # (n_sources, n_samples) at the array centroid
    far_end: np.ndarray | None = None  # reference feed when a source has one
    far_name: str | None = None  # which source the reference belongs to


def _require_inside(room, point, what: str) -> None:
    for coord, size in zip(point, room):
        if not _WALL_MARGIN <= coord <= size - _WALL_MARGIN:
            raise ValueError(f"{what} position {tuple(point)} not inside room {room}")


def _surface_betas(absorption) -> np.ndarray:
    """Pressure reflection coefficient per surface, (3 axes, lo/hi walls)."""
    alpha = np.asarray(absorption, dtype=np.float64)
    if alpha.ndim == 0:
        alpha = np.full(6, float(alpha))
    elif alpha.shape != (6,):
        raise ValueError("absorption must be a scalar or 6 per-surface values")
    return np.sqrt(1.0 - alpha).reshape(3, 2)


def _add_pulse(rir: np.ndarray, delay: float, amplitude: float) -> None:
    k = math.floor(delay)
    frac = delay - k
    if frac == 0.0:
        if 0 <= k < len(rir):
            rir[k] += amplitude
        return
    kernel = _sinc_kernel(frac, _KERNEL_TAPS)
    start = k - (_KERNEL_TAPS // 2 - 1)
    lo = max(start, 0)
    hi = min(start + _KERNEL_TAPS, len(rir))
    if lo < hi:
        rir[lo:hi] += amplitude * kernel[lo - start : hi - start]


def image_source_rir(
    room,
    absorption,
    src_pos,
    mic_pos,
    max_order: int,
    sample_rate: int = 16000,
    speed_of_sound: float = SPEED_OF_SOUND,
) -> np.ndarray:
    """Room impulse response from one source to one microphone.

    Standard rectangular-room image enumeration truncated at max_order total
    reflections. Each image lands as a windowed-sinc pulse at its fractional
    arrival time with amplitude (product of wall reflections) / distance.
    """
    room = np.asarray(room, dtype=np.float64)
    src = np.asarray(src_pos, dtype=np.float64)
    mic = np.asarray(mic_pos, dtype=np.float64)
    if max_order < 0:
        raise ValueError("max_order must be >= 0")
    _require_inside(room, src, "source")
    _require_inside(room, mic, "microphone")
    if np.linalg.norm(src - mic) < 1e-6:
        raise ValueError("source coincident with microphone")
    betas = _surface_betas(absorption)

    # Per-axis image coordinates with their reflection counts off each wall.
    coords, orders, gains = [], [], []
    half = max_order // 2 + 1
    for d in range(3):
        cs, os_, gs = [], [], []
        for q in (0, 1):
            for m in range(-half, half + 1):
                n_lo, n_hi = abs(m - q), abs(m)
                if n_lo + n_hi > max_order:
                    continue
                cs.append((1 - 2 * q) * src[d] + 2 * m * room[d])
                os_.append(n_lo + n_hi)
                gs.append(betas[d, 0] ** n_lo * betas[d, 1] ** n_hi)
        coords.append(np.array(cs))
        orders.append(np.array(os_))
        gains.append(np.array(gs))

    total = (
        orders[0][:, None, None] + orders[1][None, :, None] + orders[2][None, None, :]
    )
    keep = total <= max_order
    gain = (
        gains[0][:, None, None] * gains[1][None, :, None] * gains[2][None, None, :]
    )[keep]
    dx = (coords[0] - mic[0])[:, None, None]
    dy = (coords[1] - mic[1])[None, :, None]
    dz = (coords[2] - mic[2])[None, None, :]
    dist = np.sqrt(dx * dx + dy * dy + dz * dz)[keep]

    delays = dist / speed_of_sound * sample_rate
    rir = np.zeros(int(np.max(delays)) + _KERNEL_TAPS)
    for delay, g, r in zip(delays, gain, dist):
        if g != 0.0:
            _add_pulse(rir, float(delay), float(g / r))
    return rir


def _source_signal(
    spec: SourceSpec, duration: float, sample_rate: int, rng: np.random.Generator
) -> np.ndarray:
    n = int(round(duration * sample_rate))
    if spec.kind == "voice":
        return synth_voice(duration, sample_rate, rng, pitch_hz=spec.pitch_hz)
    if spec.kind == "noise":
        return white_noise(duration, sample_rate, rng)
    if spec.kind == "tone":
        t = np.arange(n) / sample_rate
        return np.sqrt(2.0) * np.sin(2.0 * np.pi * spec.pitch_hz * t)
    if spec.kind == "wav":
        if spec.wav_path is None:
            raise ValueError(f"source {spec.name!r}: kind 'wav' needs wav_path")
        file_rate, samples = read_wav(spec.wav_path)
        if file_rate != sample_rate:
            raise ValueError(
                f"source {spec.name!r}: {file_rate} Hz file, need {sample_rate}"
            )
        mono = samples.mean(axis=0)
        reps = int(np.ceil(n / max(len(mono), 1)))
        return np.tile(mono, reps)[:n]
    raise ValueError(f"unknown source kind {spec.kind!r}")


def _render_path(
    signal: np.ndarray,
    spec: SourceSpec,
    scenario: Scenario,
    mic_positions: np.ndarray,
    max_order: int,
    sample_rate: int,
) -> np.ndarray:
    """Convolve one source into (n_mics, n) at the given mic positions."""
    n = len(signal)
    n_mics = mic_positions.shape[0]
    out = np.zeros((n_mics, n))

    def rirs_at(pos):
        return [
            image_source_rir(
                scenario.room, scenario.absorption, pos, mic, max_order, sample_rate
            )
            for mic in mic_positions
        ]

    if spec.is_static:
        rirs = rirs_at(spec.position_at(0.0))
        for m, rir in enumerate(rirs):
            out[m] += fftconvolve(signal, rir)[:n]
        return out

    # Moving source: hold the response for one interval, triangular
    # crossfade between consecutive renders. Window pairs sum to one so a
    # stationary stretch reproduces the static path exactly.
    hop = int(RIR_UPDATE_INTERVAL_S * sample_rate)
    win = np.concatenate([np.arange(hop), hop - np.arange(hop)]) / hop
    prev_pos, rirs = None, None
    for b in range(-1, int(np.ceil(n / hop))):
        t_center = min(max((b + 1) * hop / sample_rate, 0.0), n / sample_rate)
        pos = spec.position_at(t_center)
        if prev_pos is None or not np.array_equal(pos, prev_pos):
            rirs = rirs_at(pos)
            prev_pos = pos
        start = b * hop
        lo = max(start, 0)
        hi = min(start + 2 * hop, n)
        if lo >= hi:
            continue
        chunk = signal[lo:hi] * win[lo - start : hi - start]
        for m, rir in enumerate(rirs):
            seg = fftconvolve(chunk, rir)
            stop = min(lo + len(seg), n)
            out[m, lo:stop] += seg[: stop - lo]
    return out


def render_scenario(
    scenario: Scenario,
    geometry: ArrayGeometry | None = None,
    fmt: AudioFormat | None = None,
    max_order: int = DEFAULT_MAX_ORDER,
) -> tuple[np.ndarray, GroundTruth]:
    """Render a scenario to (n_mics, n_samples) audio plus its GroundTruth."""
    geometry = geometry or ArrayGeometry.circular()
    fmt = fmt or AudioFormat()
    sr = fmt.sample_rate
    n = int(round(scenario.duration * sr))
    n_frames = n // fmt.hop_len
    mic_world = scenario.array_pose.mic_positions(geometry)
    centroid = np.asarray(scenario.array_pose.position, dtype=np.float64)

    out = np.zeros((geometry.num_mics, n))
    azimuths = np.zeros((len(scenario.sources), n_frames))
    distances = np.zeros((len(scenario.sources), n_frames))
    active = np.zeros((len(scenario.sources), n_frames), dtype=bool)
    clean = np.zeros((len(scenario.sources), n))
    far_end = None
    far_name = None

    streams = np.random.SeedSequence(scenario.seed).spawn(
        len(scenario.sources) + len(scenario.noise_beds)
    )
    frame_times = (np.arange(n_frames) + 0.5) * fmt.hop_len / sr

    for i, spec in enumerate(scenario.sources):
        rng = np.random.default_rng(streams[i])
        sig = _source_signal(spec, scenario.duration, sr, rng) * db_to_lin(
            spec.gain_db
        )
        out += _render_path(sig, spec, scenario, mic_world, max_order, sr)
        clean[i] = _render_path(
            sig, spec, scenario, centroid[np.newaxis, :], 0, sr
        )[0]
        if spec.far_end_reference:
            far_end = sig
            far_name = spec.name
        for f, t in enumerate(frame_times):
            rel = spec.position_at(t) - centroid
            azimuths[i, f] = wrap_degrees(
                math.degrees(math.atan2(rel[1], rel[0])) - scenario.array_pose.yaw_deg
            )
            distances[i, f] = float(np.hypot(rel[0], rel[1]))
        levels = np.array(
            [
                rms_dbfs(clean[i, f * fmt.hop_len : (f + 1) * fmt.hop_len])
                for f in range(n_frames)
            ]
        )
        if np.max(levels) > -90.0:
            active[i] = levels > np.max(levels) - 30.0

    for j, bed in enumerate(scenario.noise_beds):
        rng = np.random.default_rng(streams[len(scenario.sources) + j])
        scale = db_to_lin(bed.level_dbfs)
        for m in range(geometry.num_mics):
            out[m] += scale * make_noise(bed.generator, scenario.duration, sr, rng)[:n]

    gt = GroundTruth(
        frame_rate=sr / fmt.hop_len,
        names=tuple(s.name for s in scenario.sources),
        azimuths=azimuths,
        active=active,
        distances=distances,
        clean=clean,
        far_end=far_end,
        far_name=far_name,
    )
    return out, gt


def ground_truth_records(gt: GroundTruth):
    """One dict per frame, ready for newline-delimited serialization."""
    n_frames = gt.azimuths.shape[1]
    for f in range(n_frames):
        yield {
            "frame": f,
            "time": f / gt.frame_rate,
            "sources": [
                {
                    "name": gt.names[i],
                    "azimuth": round(float(gt.azimuths[i, f]), 2),
                    "active": bool(gt.active[i, f]),
                    "distance": round(float(gt.distances[i, f]), 3),
                    "far_end": gt.names[i] == gt.far_name,
                }
                for i in range(len(gt.names))
            ],
        }


def _number(obj, path: str) -> float:
    if isinstance(obj, bool) or not isinstance(obj, (int, float)):
        raise ValueError(f"scenario {path} must be a number, got {obj!r}")
    return float(obj)


def _triple(obj, path: str) -> tuple[float, float, float]:
    if not isinstance(obj, (list, tuple)) or len(obj) != 3:
        raise ValueError(f"scenario {path} must be three numbers")
    x, y, z = (_number(v, path) for v in obj)
    return (x, y, z)


def _source_from_dict(obj, index: int) -> SourceSpec:
    path = f"sources[{index}]"
    if not isinstance(obj, dict):
        raise ValueError(f"scenario {path} must be an object")
    name = obj.get("name", f"source_{index}")
    if "trajectory" in obj:
        way = obj["trajectory"]
        if not isinstance(way, (list, tuple)) or not way:
            raise ValueError(f"scenario {path}.trajectory must be a waypoint list")
        points = []
        for w in way:
            if not isinstance(w, (list, tuple)) or len(w) != 4:
                raise ValueError(
                    f"scenario {path}.trajectory waypoints are [t, x, y, z]"
                )
            points.append(
                (_number(w[0], f"{path}.trajectory"),)
                + _triple(w[1:], f"{path}.trajectory")
            )
        trajectory = tuple(points)
    elif "position" in obj:
        trajectory = ((0.0,) + _triple(obj["position"], f"{path}.position"),)
    else:
        raise ValueError(f"scenario {path} needs a position or a trajectory")
    known = {
        "name", "trajectory", "position", "gain_db", "kind",
        "wav_path", "pitch_hz", "far_end_reference",
    }
    for key in obj:
        if key not in known:
            raise ValueError(f"scenario {path} has unknown key {key!r}")
    return SourceSpec(
        name=str(name),
        trajectory=trajectory,
        gain_db=_number(obj.get("gain_db", 0.0), f"{path}.gain_db"),
        kind=str(obj.get("kind", "voice")),
        wav_path=obj.get("wav_path"),
        pitch_hz=_number(obj.get("pitch_hz", 120.0), f"{path}.pitch_hz"),
        far_end_reference=bool(obj.get("far_end_reference", False)),
    )


def scenario_from_dict(obj: dict) -> Scenario:
    """Build a Scenario from the documented JSON file shape.

    Validation errors carry the offending field path; Scenario's own
    geometry checks (positions inside the room) run afterwards and name
    the source.
    """
    if not isinstance(obj, dict):
        raise ValueError("scenario file must hold a JSON object")
    known = {
        "room", "absorption", "array", "sources",
        "noise_beds", "duration", "seed",
    }
    for key in obj:
        if key not in known:
            raise ValueError(f"scenario has unknown key {key!r}")
    for key in ("room", "array", "sources"):
        if key not in obj:
            raise ValueError(f"scenario needs {key!r}")
    array = obj["array"]
    if not isinstance(array, dict) or "position" not in array:
        raise ValueError("scenario array must be an object with a position")
    pose = ArrayPose(
        position=_triple(array["position"], "array.position"),
        yaw_deg=_number(array.get("yaw_deg", 0.0), "array.yaw_deg"),
    )
    absorption = obj.get("absorption", 0.5)
    if isinstance(absorption, (list, tuple)):
        absorption = tuple(_number(a, "absorption") for a in absorption)
    else:
        absorption = _number(absorption, "absorption")
    sources = obj["sources"]
    if not isinstance(sources, (list, tuple)):
        raise ValueError("scenario sources must be a list")
    beds = []
    for i, bed in enumerate(obj.get("noise_beds", [])):
        if not isinstance(bed, dict) or "kind" not in bed or "level_dbfs" not in bed:
            raise ValueError(f"scenario noise_beds[{i}] needs kind and level_dbfs")
        beds.append(
            NoiseBed(
                kind=str(bed["kind"]),
                level_dbfs=_number(bed["level_dbfs"], f"noise_beds[{i}].level_dbfs"),
                generator=str(bed.get("generator", "white")),
            )
        )
    return Scenario(
        room=_triple(obj["room"], "room"),
        absorption=absorption,
        array_pose=pose,
        sources=tuple(_source_from_dict(s, i) for i, s in enumerate(sources)),
        noise_beds=tuple(beds),
        duration=_number(obj.get("duration", 10.0), "duration"),
        seed=int(_number(obj.get("seed", 0), "seed")),
    )


def _arc_waypoints(
    center: np.ndarray,
    radius: float,
    z: float,
    az_start: float,
    az_stop: float,
    t_start: float,
    t_stop: float,
    step_deg: float = 5.0,
):
    """Constant-speed waypoints along a horizontal arc about center."""
    n_steps = max(int(abs(az_stop - az_start) / step_deg), 1)
    az = np.linspace(az_start, az_stop, n_steps + 1)
    times = np.linspace(t_start, t_stop, n_steps + 1)
    return [
        (
            float(t),
            float(center[0] + radius * math.cos(math.radians(a))),
            float(center[1] + radius * math.sin(math.radians(a))),
            z,
        )
        for t, a in zip(times, az)
    ]


def preset(name: str, duration: float | None = None, seed: int = 0) -> Scenario:
    """Built-in scenes: sitting_room, cafeteria, lecture_hall.

    sitting_room: one nearby talker plus a TV four meters off whose feed is
    exported as the echo-canceller reference. cafeteria: four talkers around
    a table with steady and impulsive background beds. lecture_hall: one
    talker pacing an arc five meters away.
    """
    if name == "sitting_room":
        duration = 12.0 if duration is None else duration
        pose = ArrayPose((1.0, 0.8, 1.2))
        speaker = (
            1.0 + math.cos(math.radians(30.0)),
            0.8 + math.sin(math.radians(30.0)),
            1.25,
        )
        tv = (
            1.0 + 4.0 * math.cos(math.radians(75.0)),
            0.8 + 4.0 * math.sin(math.radians(75.0)),
            1.0,
        )
        return Scenario(
            room=(4.0, 5.0, 2.6),
            absorption=0.35,
            array_pose=pose,
            sources=(
                SourceSpec("talker", ((0.0,) + speaker,), gain_db=-24.0, pitch_hz=115.0),
                SourceSpec(
                    "tv",
                    ((0.0,) + tv,),
                    gain_db=-20.0,
                    pitch_hz=205.0,
                    far_end_reference=True,
                ),
            ),
            noise_beds=(NoiseBed("stationary", -50.0, "hvac"),),
            duration=duration,
            seed=seed,
        )
    if name == "cafeteria":
        duration = 16.0 if duration is None else duration
        pose = ArrayPose((4.0, 5.0, 1.1))
        table = []
        for i, (az, r, pitch) in enumerate(
            ((30.0, 0.9, 100.0), (120.0, 1.1, 140.0), (210.0, 0.8, 180.0), (300.0, 1.2, 230.0))
        ):
            pos = (
                4.0 + r * math.cos(math.radians(az)),
                5.0 + r * math.sin(math.radians(az)),
                1.2,
            )
            # farther guests talk a bit louder, keeping received levels close
            gain = -26.0 + 20.0 * math.log10(r / 0.8)
            table.append(
                SourceSpec(f"guest{i}", ((0.0,) + pos,), gain_db=gain, pitch_hz=pitch)
            )
        return Scenario(
            room=(8.0, 10.0, 3.0),
            absorption=0.4,
            array_pose=pose,
            sources=tuple(table),
            noise_beds=(
                NoiseBed("stationary", -45.0, "hvac"),
                NoiseBed("stationary", -50.0, "vending"),
                NoiseBed("nonstationary", -45.0, "footsteps"),
                NoiseBed("nonstationary", -48.0, "dishes"),
            ),
            duration=duration,
            seed=seed,
        )
    if name == "lecture_hall":
        duration = 20.0 if duration is None else duration
        center = np.array([5.0, 1.5])
        # Dwell at each end of the pacing arc: the opening dwell is the
        # static far-field segment, the walks are the traverse.
        dwell = 0.15 * duration
        walk = (duration - 3.0 * dwell) / 2.0
        way = _arc_waypoints(center, 5.0, 1.65, 60.0, 60.0, 0.0, dwell)
        way += _arc_waypoints(
            center, 5.0, 1.65, 60.0, 120.0, dwell, dwell + walk
        )[1:]
        way += _arc_waypoints(
            center, 5.0, 1.65, 120.0, 120.0, dwell + walk, 2.0 * dwell + walk
        )[1:]
        way += _arc_waypoints(
            center, 5.0, 1.65, 120.0, 60.0, 2.0 * dwell + walk, duration - dwell
        )[1:]
        way += _arc_waypoints(
            center, 5.0, 1.65, 60.0, 60.0, duration - dwell, duration
        )[1:]
        return Scenario(
            room=(10.0, 8.0, 3.5),
            absorption=0.4,
            array_pose=ArrayPose((5.0, 1.5, 1.2)),
            sources=(
                SourceSpec(
                    "lecturer", tuple(way), gain_db=-20.0, pitch_hz=130.0
                ),
            ),
            noise_beds=(NoiseBed("stationary", -55.0, "hvac"),),
            duration=duration,
            seed=seed,
        )
    raise ValueError(f"unknown preset {name!r}; valid presets: {', '.join(PRESET_NAMES)}")
