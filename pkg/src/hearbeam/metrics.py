"""Scoring a pipeline run against simulator ground truth.

Everything here consumes the plain-dict record forms (telemetry lines from
a run, ground-truth lines from the simulator) plus raw sample arrays, so
the same code scores an in-memory run and a pair of files from disk.
Angle errors are circular throughout.
"""

from __future__ import annotations

import math
from typing import Any, Sequence

import numpy as np
import scipy.signal

from hearbeam.localization import circular_distance

SEG_FRAME_LEN = 256
SEG_ACTIVE_DB = -40.0  # reference segments quieter than peak-40 dB are skipped
SEG_CLAMP_LO = -10.0
SEG_CLAMP_HI = 35.0

Record = dict[str, Any]


def selected_series(records: Sequence[Record]) -> tuple[list, list]:
    """Per-frame (selected_id, selected_azimuth) from telemetry records."""
    ids = [r.get("selected_id") for r in records]
    azimuths = [r.get("selected_azimuth") for r in records]
    return ids, azimuths


def truth_azimuths(truth: Record, active_only: bool = True) -> list[float]:
    return [
        s["azimuth"]
        for s in truth["sources"]
        if s["active"] or not active_only
    ]


def doa_errors(
    records: Sequence[Record], truths: Sequence[Record]
) -> np.ndarray:
    """Per-frame error of the selected azimuth against the nearest true source.

    Frames without a selection, or without any active true source, score
    NaN and are excluded from the stats.
    """
    n = min(len(records), len(truths))
    out = np.full(n, np.nan)
    for i in range(n):
        azimuth = records[i].get("selected_azimuth")
        if azimuth is None:
            continue
        candidates = truth_azimuths(truths[i])
        if not candidates:
            continue
        out[i] = min(circular_distance(azimuth, c) for c in candidates)
    return out


def doa_stats(errors: np.ndarray) -> dict[str, float]:
    valid = np.asarray(errors, dtype=np.float64)
    valid = valid[~np.isnan(valid)]
    if len(valid) == 0:
        return {"frames": 0, "median": math.nan, "p90": math.nan, "max": math.nan}
    return {
        "frames": int(len(valid)),
        "median": float(np.median(valid)),
        "p90": float(np.percentile(valid, 90)),
        "max": float(np.max(valid)),
    }


def track_discontinuities(records: Sequence[Record]) -> np.ndarray:
    """Azimuth jumps between consecutive frames with the same selected id."""
    jumps = []
    for prev, cur in zip(records, records[1:]):
        pid, cid = prev.get("selected_id"), cur.get("selected_id")
        paz, caz = prev.get("selected_azimuth"), cur.get("selected_azimuth")
        if pid is None or pid != cid or paz is None or caz is None:
            continue
        jumps.append(circular_distance(paz, caz))
    return np.asarray(jumps, dtype=np.float64)


def switch_count(records: Sequence[Record]) -> int:
    """Number of automatic or manual lead changes between live selections."""
    count = 0
    last = None
    for r in records:
        sid = r.get("selected_id")
        if sid is None:
            continue
        if last is not None and sid != last:
            count += 1
        last = sid
    return count


def selected_id_set(records: Sequence[Record]) -> list[int]:
    """Distinct selected ids in order of first appearance."""
    seen: list[int] = []
    for r in records:
        sid = r.get("selected_id")
        if sid is not None and sid not in seen:
            seen.append(sid)
    return seen


def active_track_counts(records: Sequence[Record]) -> np.ndarray:
    return np.array(
        [sum(1 for s in r.get("sources", []) if s.get("active")) for r in records],
        dtype=np.int64,
    )


def tracks_on_truth(
    record: Record, truth: Record, tol_deg: float
) -> bool:
    """Every active track sits within tol of some true source azimuth."""
    candidates = truth_azimuths(truth, active_only=False)
    for s in record.get("sources", []):
        if not s.get("active"):
            continue
        if not candidates:
            return False
        if min(circular_distance(s["azimuth"], c) for c in candidates) > tol_deg:
            return False
    return True


def longest_exact_count_window(
    records: Sequence[Record],
    truths: Sequence[Record],
    expected: int,
    tol_deg: float,
    frame_rate: float,
) -> tuple[float, float]:
    """Longest run of frames with exactly `expected` on-truth active tracks.

    Returns (length_seconds, start_seconds) of the best run.
    """
    n = min(len(records), len(truths))
    best_len = cur_len = 0
    best_start = cur_start = 0
    for i in range(n):
        ok = active_track_counts([records[i]])[0] == expected and tracks_on_truth(
            records[i], truths[i], tol_deg
        )
        if ok:
            if cur_len == 0:
                cur_start = i
            cur_len += 1
            if cur_len > best_len:
                best_len, best_start = cur_len, cur_start
        else:
            cur_len = 0
    return best_len / frame_rate, best_start / frame_rate


def fit_gain(reference: np.ndarray, signal: np.ndarray) -> float:
    """Least-squares scalar mapping signal onto reference."""
    num = float(np.dot(reference, signal))
    den = float(np.dot(signal, signal))
    return num / den if den > 0.0 else 1.0


def estimate_latency(
    reference: np.ndarray, delayed: np.ndarray, max_lag: int = 1024
) -> int:
    """Non-negative delay of `delayed` against `reference`, in samples.

    Cross-correlation peak over [0, max_lag]; lets an evaluation align a
    processed file without knowing which chain stages produced it.
    """
    n = min(len(reference), len(delayed))
    a = np.asarray(reference, dtype=np.float64)[:n]
    b = np.asarray(delayed, dtype=np.float64)[:n]
    corr = scipy.signal.fftconvolve(b, a[::-1], mode="full")
    zero = n - 1
    window = corr[zero : zero + max_lag + 1]
    return int(np.argmax(window))


def segmental_snr_db(
    reference: np.ndarray,
    signal: np.ndarray,
    frame_len: int = SEG_FRAME_LEN,
    fit: bool = True,
) -> float:
    """Clamped segmental SNR of signal against the clean reference.

    Averaged over segments where the reference is active (within 40 dB of
    its own RMS). A least-squares gain is fitted first so a level change
    (AGC) does not read as distortion.
    """
    n = min(len(reference), len(signal))
    reference = np.asarray(reference, dtype=np.float64)[:n]
    signal = np.asarray(signal, dtype=np.float64)[:n]
    if fit:
        signal = signal * fit_gain(reference, signal)
    full_rms = float(np.sqrt(np.mean(reference**2)))
    if full_rms == 0.0:
        return math.nan
    threshold = full_rms * 10.0 ** (SEG_ACTIVE_DB / 20.0)
    values = []
    for i in range(n // frame_len):
        ref = reference[i * frame_len : (i + 1) * frame_len]
        err = ref - signal[i * frame_len : (i + 1) * frame_len]
        p_ref = float(np.sum(ref**2))
        if math.sqrt(p_ref / frame_len) <= threshold:
            continue
        p_err = max(float(np.sum(err**2)), 1e-20)
        values.append(
            min(max(10.0 * math.log10(p_ref / p_err), SEG_CLAMP_LO), SEG_CLAMP_HI)
        )
    return float(np.mean(values)) if values else math.nan


def segmental_snr_gain_db(
    clean: np.ndarray,
    processed: np.ndarray,
    raw: np.ndarray,
    latency_samples: int,
) -> dict[str, float]:
    """Chain benefit: segSNR of the latency-aligned output minus the raw mic."""
    aligned = processed[latency_samples:]
    after = segmental_snr_db(clean, aligned)
    before = segmental_snr_db(clean, raw)
    return {"raw_db": before, "processed_db": after, "gain_db": after - before}


def nearest_mic_channel(
    mics: np.ndarray, mic_positions: np.ndarray, source_xy: np.ndarray
) -> int:
    """Index of the microphone closest to a source position (xy meters)."""
    d = np.linalg.norm(
        mic_positions[:, :2] - np.asarray(source_xy, dtype=np.float64), axis=1
    )
    return int(np.argmin(d))


def echo_only_mask(truths: Sequence[Record]) -> np.ndarray:
    """Frames where the far-end source plays and every other source is silent."""
    out = np.zeros(len(truths), dtype=bool)
    for i, truth in enumerate(truths):
        far_active = False
        near_active = False
        for s in truth["sources"]:
            if s.get("far_end"):
                far_active = s["active"]
            elif s["active"]:
                near_active = True
        out[i] = far_active and not near_active
    return out


def erle_db(
    aec_powers: Sequence[tuple[float, float] | None],
    mask: np.ndarray,
    frame_rate: float,
    after_s: float = 5.0,
) -> float:
    """Echo return loss enhancement over masked frames past the settle time.

    Power entering vs leaving the canceller, summed over echo-only frames,
    so near-end speech never contaminates the ratio.
    """
    start = int(round(after_s * frame_rate))
    p_in = p_out = 0.0
    for i, powers in enumerate(aec_powers):
        if i < start or powers is None:
            continue
        if i < len(mask) and not mask[i]:
            continue
        p_in += powers[0]
        p_out += powers[1]
    if p_out <= 0.0 or p_in <= 0.0:
        return 0.0
    return 10.0 * math.log10(p_in / p_out)
