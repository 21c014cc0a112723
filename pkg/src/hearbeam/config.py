"""Run configuration: one JSON file, strict schema, CLI overrides on top.

The file supplies the audio format, array geometry, enhancement defaults,
and the tracker/beam behavior knobs. Every section and key is optional;
anything present is validated strictly (unknown keys are an error, so a
typo cannot silently fall back to a default).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from hearbeam.dsp import AudioFormat
from hearbeam.enhancement import TuningState
from hearbeam.localization import ArrayGeometry, AzimuthGrid
from hearbeam.tracker import SWITCH_HANGOVER_S, SWITCH_MARGIN_DB

RETARGET_THRESHOLD_DEG = 2.5  # ignore sub-cell jitter in the steered azimuth


class ConfigError(ValueError):
    """A configuration file or override that fails validation."""


@dataclass(frozen=True)
class PipelineConfig:
    fmt: AudioFormat = field(default_factory=AudioFormat)
    geometry: ArrayGeometry = field(default_factory=ArrayGeometry.circular)
    tuning: TuningState = field(default_factory=TuningState)
    grid: AzimuthGrid = field(default_factory=AzimuthGrid)
    switch_margin_db: float = SWITCH_MARGIN_DB
    switch_hangover_s: float = SWITCH_HANGOVER_S
    retarget_threshold_deg: float = RETARGET_THRESHOLD_DEG


_AUDIO_KEYS = {"sample_rate": int, "channels": int, "frame_len": int, "hop_len": int}
_ARRAY_KEYS = {"num_mics": int, "radius_m": float, "speed_of_sound": float}
_TRACKER_KEYS = {"switch_margin_db": float, "switch_hangover_s": float}
_LOCALIZATION_KEYS = {"grid_resolution_deg": float}
_BEAM_KEYS = {"retarget_threshold_deg": float}
_TUNING_BOOL_KEYS = (
    "agc_enabled",
    "nonstationary_ns_enabled",
    "stationary_ns_enabled",
    "highpass_enabled",
    "comfort_noise_enabled",
    "transient_suppression_enabled",
    "aec_enabled",
)
_SECTIONS = ("audio", "array", "tuning", "tracker", "localization", "beam")


def _take_section(obj: dict, name: str, keys: dict[str, type]) -> dict[str, Any]:
    section = obj.get(name, {})
    if not isinstance(section, dict):
        raise ConfigError(f"section {name!r} must be an object")
    out: dict[str, Any] = {}
    for key, value in section.items():
        if key not in keys:
            raise ConfigError(f"unknown key {name}.{key}")
        want = keys[key]
        if want is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if isinstance(value, bool) or not isinstance(value, want):
            raise ConfigError(f"{name}.{key} must be {want.__name__}")
        out[key] = value
    return out


def _tuning_from(obj: dict) -> TuningState:
    section = obj.get("tuning", {})
    if not isinstance(section, dict):
        raise ConfigError("section 'tuning' must be an object")
    kwargs: dict[str, Any] = {}
    for key, value in section.items():
        if key in _TUNING_BOOL_KEYS:
            if not isinstance(value, bool):
                raise ConfigError(f"tuning.{key} must be true or false")
            kwargs[key] = value
        elif key == "aec_threshold":
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError("tuning.aec_threshold must be a number")
            kwargs[key] = float(value)
        else:
            raise ConfigError(f"unknown key tuning.{key}")
    try:
        return TuningState(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def config_from_dict(obj: dict) -> PipelineConfig:
    if not isinstance(obj, dict):
        raise ConfigError("config root must be a JSON object")
    for key in obj:
        if key not in _SECTIONS:
            raise ConfigError(f"unknown section {key!r}")

    audio = _take_section(obj, "audio", _AUDIO_KEYS)
    array = _take_section(obj, "array", _ARRAY_KEYS)
    tracker = _take_section(obj, "tracker", _TRACKER_KEYS)
    loc = _take_section(obj, "localization", _LOCALIZATION_KEYS)
    beam = _take_section(obj, "beam", _BEAM_KEYS)

    try:
        fmt = AudioFormat(**audio)
        geometry = ArrayGeometry.circular(
            num_mics=array.get("num_mics", 4), radius=array.get("radius_m", 0.032)
        )
        if "speed_of_sound" in array:
            geometry = replace(geometry, speed_of_sound=array["speed_of_sound"])
        grid = AzimuthGrid(resolution=loc.get("grid_resolution_deg", 5.0))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    return PipelineConfig(
        fmt=fmt,
        geometry=geometry,
        tuning=_tuning_from(obj),
        grid=grid,
        switch_margin_db=tracker.get("switch_margin_db", SWITCH_MARGIN_DB),
        switch_hangover_s=tracker.get("switch_hangover_s", SWITCH_HANGOVER_S),
        retarget_threshold_deg=beam.get(
            "retarget_threshold_deg", RETARGET_THRESHOLD_DEG
        ),
    )


def load_config(path: str | Path | None) -> PipelineConfig:
    """Load a config file; None means all defaults."""
    if path is None:
        return PipelineConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc.msg}") from exc
    return config_from_dict(obj)


def apply_param_overrides(
    config: PipelineConfig, assignments: list[str]
) -> PipelineConfig:
    """Apply `--set name=value` pairs on top of the file's tuning defaults.

    Values use JSON literals: true, false, or a number for aec_threshold.
    """
    tuning = config.tuning
    for item in assignments:
        name, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not name=value")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            raise ConfigError(f"override value {raw!r} is not a JSON literal")
        if name in _TUNING_BOOL_KEYS:
            if not isinstance(value, bool):
                raise ConfigError(f"{name} takes true or false")
            tuning = replace(tuning, **{name: value})
        elif name == "aec_threshold":
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError("aec_threshold takes a number")
            try:
                tuning = replace(tuning, aec_threshold=float(value))
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
        else:
            raise ConfigError(f"no parameter named {name!r}")
    return replace(config, tuning=tuning)
