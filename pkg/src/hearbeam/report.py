"""Evaluation reports: summary metrics, a per-frame table, and figures.

Consumes the newline-delimited telemetry sidecar written by offline
processing plus the ground-truth sidecar written by the simulator, both
as plain dicts. Everything is computed before anything is written, so a
failing input never leaves a partial report behind.
"""

import csv
import json
import math
from collections import Counter
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from hearbeam.metrics import (
    active_track_counts,
    doa_errors,
    doa_stats,
    echo_only_mask,
    erle_db,
    longest_exact_count_window,
    segmental_snr_db,
    selected_series,
    selected_id_set,
    switch_count,
    track_discontinuities,
    truth_azimuths,
)

TRACK_MATCH_TOL_DEG = 15.0
ERLE_SETTLE_S = 5.0
FIGURE_DPI = 120


def load_records(path) -> list[dict]:
    """Read newline-delimited JSON objects, one record per line."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as err:
                raise ValueError(f"{path}:{lineno}: not valid JSON ({err.msg})")
            if not isinstance(obj, dict):
                raise ValueError(f"{path}:{lineno}: record must be an object")
            records.append(obj)
    if not records:
        raise ValueError(f"{path}: no records")
    return records


def check_frame_clocks(records: list[dict], truths: list[dict]) -> None:
    """Evaluation pairs telemetry to truth by position; clocks must agree."""
    if len(records) != len(truths):
        raise ValueError(
            f"frame clocks differ: {len(records)} telemetry frames "
            f"vs {len(truths)} ground-truth frames"
        )
    for i, (record, truth) in enumerate(zip(records, truths)):
        if record.get("frame_index") != i or truth.get("frame") != i:
            raise ValueError(f"frame indices not contiguous from 0 at row {i}")


def aec_power_series(records: list[dict]) -> list[tuple[float, float] | None]:
    out = []
    for record in records:
        aec = record.get("aec")
        out.append((aec["in_power"], aec["out_power"]) if aec else None)
    return out


def build_report(
    records: list[dict],
    truths: list[dict],
    frame_rate: float,
    count_tol_deg: float = TRACK_MATCH_TOL_DEG,
) -> dict:
    """Tracking and localization metrics; audio metrics are added separately."""
    errors = doa_errors(records, truths)
    stats = doa_stats(errors)
    jumps = track_discontinuities(records)
    expected = max(
        sum(1 for s in truth["sources"] if s["active"]) for truth in truths
    )
    window_s, window_start_s = longest_exact_count_window(
        records, truths, expected, count_tol_deg, frame_rate
    )
    histogram = Counter(int(c) for c in active_track_counts(records))
    return {
        "kind": "evaluation_report",
        "frames": len(records),
        "duration_s": round(len(records) / frame_rate, 3),
        "frame_rate": round(frame_rate, 3),
        "doa": {
            "frames": stats["frames"],
            "median_deg": _round(stats["median"]),
            "p90_deg": _round(stats["p90"]),
            "max_deg": _round(stats["max"]),
        },
        "tracking": {
            "selected_ids": selected_id_set(records),
            "switch_count": switch_count(records),
            "max_jump_deg": _round(float(np.max(jumps)) if len(jumps) else 0.0),
        },
        "counts": {
            "expected_sources": int(expected),
            "histogram": {str(k): histogram[k] for k in sorted(histogram)},
            "exact_window_s": _round(window_s),
            "exact_window_start_s": _round(window_start_s),
            "match_tolerance_deg": count_tol_deg,
        },
    }


def add_erle(
    report: dict,
    records: list[dict],
    truths: list[dict],
    frame_rate: float,
    after_s: float = ERLE_SETTLE_S,
) -> None:
    """ERLE over echo-only frames, when a far-end reference exists."""
    if not any(s.get("far_end") for s in truths[0]["sources"]):
        report["erle"] = None
        return
    powers = aec_power_series(records)
    mask = echo_only_mask(truths)
    start = int(round(after_s * frame_rate))
    used = sum(
        1 for i in range(start, len(powers)) if mask[i] and powers[i] is not None
    )
    report["erle"] = {
        "erle_db": _round(erle_db(powers, mask, frame_rate, after_s)),
        "frames_used": used,
        "settle_s": after_s,
    }


def add_seg_snr(
    report: dict,
    clean: np.ndarray,
    processed: np.ndarray,
    raws: np.ndarray,
    latency_samples: int,
    baseline_channel: int | None = None,
) -> None:
    """Segmental SNR gain of ch0 over a raw mic.

    With no channel given the best-scoring raw mic is the baseline, which
    is the most conservative gain figure.
    """
    raw_scores = [segmental_snr_db(clean, raw) for raw in raws]
    if baseline_channel is None:
        baseline_channel = int(np.nanargmax(raw_scores))
    processed_db = segmental_snr_db(clean, processed[latency_samples:])
    raw_db = raw_scores[baseline_channel]
    report["seg_snr"] = {
        "processed_db": _round(processed_db),
        "raw_db": _round(raw_db),
        "gain_db": _round(processed_db - raw_db),
        "baseline_channel": baseline_channel,
        "per_mic_db": [_round(v) for v in raw_scores],
    }


def frame_rows(records: list[dict], truths: list[dict]) -> list[dict]:
    """Per-frame table pairing selection against ground truth."""
    errors = doa_errors(records, truths)
    rows = []
    for i, (record, truth) in enumerate(zip(records, truths)):
        rows.append(
            {
                "frame": i,
                "time_s": round(truth["time"], 4),
                "selected_id": record.get("selected_id"),
                "selected_azimuth_deg": record.get("selected_azimuth"),
                "doa_error_deg": (
                    round(float(errors[i]), 2) if math.isfinite(errors[i]) else ""
                ),
                "active_tracks": sum(1 for s in record["sources"] if s["active"]),
                "active_truth_sources": sum(
                    1 for s in truth["sources"] if s["active"]
                ),
                "mode": record.get("mode"),
                "input_dbfs": record["levels"]["input_dbfs"],
                "output_dbfs": record["levels"]["output_dbfs"],
            }
        )
    return rows


def write_frame_table(rows: list[dict], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def _times(n: int, frame_rate: float) -> np.ndarray:
    return np.arange(n) / frame_rate


def _figure_tracking(records, truths, frame_rate, path):
    times = _times(len(records), frame_rate)
    fig, (ax_az, ax_err) = plt.subplots(
        2, 1, figsize=(9, 6), sharex=True, height_ratios=[2, 1]
    )
    names = [s["name"] for s in truths[0]["sources"]]
    for idx, name in enumerate(names):
        az = np.array(
            [t["sources"][idx]["azimuth"] for t in truths], dtype=np.float64
        )
        active = np.array([t["sources"][idx]["active"] for t in truths])
        az[~active] = np.nan
        ax_az.plot(times, az, lw=1.2, label=f"{name} (truth)")
    sel_t, sel_az = [], []
    for i, record in enumerate(records):
        if record.get("selected_azimuth") is not None:
            sel_t.append(times[i])
            sel_az.append(record["selected_azimuth"])
    ax_az.plot(sel_t, sel_az, ".", ms=2.5, color="k", label="selected")
    ax_az.set_ylabel("azimuth (deg)")
    ax_az.set_ylim(-5, 365)
    ax_az.legend(loc="upper right", fontsize=8)

    errors = doa_errors(records, truths)
    ax_err.plot(times, errors, lw=0.9, color="tab:red")
    ax_err.set_ylabel("DOA error (deg)")
    ax_err.set_xlabel("time (s)")
    fig.tight_layout()
    fig.savefig(path, dpi=FIGURE_DPI)
    plt.close(fig)


def _figure_counts(records, truths, frame_rate, path):
    times = _times(len(records), frame_rate)
    tracked = active_track_counts(records)
    truth_counts = [
        sum(1 for s in truth["sources"] if s["active"]) for truth in truths
    ]
    fig, ax = plt.subplots(figsize=(9, 3))
    ax.step(times, truth_counts, where="post", label="truth", color="tab:gray")
    ax.step(times, tracked, where="post", label="tracked", color="tab:blue")
    ax.set_xlabel("time (s)")
    ax.set_ylabel("active sources")
    ax.set_ylim(bottom=-0.2)
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=FIGURE_DPI)
    plt.close(fig)


def _figure_levels(records, frame_rate, path):
    times = _times(len(records), frame_rate)
    fig, ax = plt.subplots(figsize=(9, 3))
    for key, color in (("input_dbfs", "tab:gray"), ("output_dbfs", "tab:green")):
        ax.plot(
            times,
            [r["levels"][key] for r in records],
            lw=0.9,
            color=color,
            label=key.replace("_dbfs", ""),
        )
    ax.set_xlabel("time (s)")
    ax.set_ylabel("level (dBFS)")
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=FIGURE_DPI)
    plt.close(fig)


def render_figures(
    records: list[dict], truths: list[dict], frame_rate: float, out_dir
) -> list[str]:
    out_dir = Path(out_dir)
    figures = {
        "tracking.png": lambda p: _figure_tracking(records, truths, frame_rate, p),
        "counts.png": lambda p: _figure_counts(records, truths, frame_rate, p),
        "levels.png": lambda p: _figure_levels(records, frame_rate, p),
    }
    for name, render in figures.items():
        render(out_dir / name)
    return sorted(figures)


def format_summary(report: dict) -> str:
    """Human-readable digest of a report dict."""
    lines = [
        f"frames {report['frames']}  duration {report['duration_s']:.1f} s",
        (
            "DOA error: median {median_deg} deg  p90 {p90_deg} deg  "
            "max {max_deg} deg  ({frames} scored frames)"
        ).format(**report["doa"]),
        (
            "tracking: ids {selected_ids}  switches {switch_count}  "
            "max jump {max_jump_deg} deg"
        ).format(**report["tracking"]),
        (
            "sources: expected {expected_sources}  exact-count window "
            "{exact_window_s} s from {exact_window_start_s} s"
        ).format(**report["counts"]),
    ]
    seg = report.get("seg_snr")
    if seg:
        lines.append(
            "segmental SNR: processed {processed_db} dB  raw mic {raw_db} dB "
            "(ch {baseline_channel})  gain {gain_db} dB".format(**seg)
        )
    erle = report.get("erle")
    if erle:
        lines.append(
            "ERLE: {erle_db} dB over {frames_used} echo-only frames "
            "after {settle_s} s".format(**erle)
        )
    elif "erle" in report:
        lines.append("ERLE: no far-end reference in ground truth")
    if report.get("figures"):
        lines.append("figures: " + "  ".join(report["figures"]))
    return "\n".join(lines)


def _round(value: float, digits: int = 2):
    return round(float(value), digits) if math.isfinite(value) else None
