"""Command line frontend: process, simulate, evaluate, and serve.

Exit codes are part of the contract: 0 success, 2 bad invocation, 3 bad
input data, 4 runtime failure. Validation happens before any output file
is touched, so a failed run never leaves partial artifacts behind.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import signal
import sys
import threading
from pathlib import Path

import numpy as np

from hearbeam import report as reporting
from hearbeam.config import (
    ConfigError,
    PipelineConfig,
    apply_param_overrides,
    load_config,
)
from hearbeam.metrics import estimate_latency, nearest_mic_channel
from hearbeam.pipeline import run_file_pipeline
from hearbeam.roomsim import (
    PRESET_NAMES,
    ground_truth_records,
    preset,
    render_scenario,
    scenario_from_dict,
)
from hearbeam.server import serve_array
from hearbeam.wavio import read_wav, write_wav

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4

log = logging.getLogger(__name__)


class UsageError(Exception):
    """Wrong invocation: unknown names, inconsistent flags."""


class DataError(Exception):
    """An input file that cannot be read or fails validation."""


# ---------------------------------------------------------------------------
# shared plumbing


def _run_config(args) -> PipelineConfig:
    """Config file (data errors) plus --set overrides (usage errors)."""
    try:
        config = load_config(args.config)
    except ConfigError as exc:
        raise DataError(str(exc)) from exc
    try:
        return apply_param_overrides(config, args.overrides)
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc


def _read_wav_checked(path, sample_rate: int, channels: int, what: str):
    try:
        rate, samples = read_wav(path)
    except FileNotFoundError as exc:
        raise DataError(f"cannot read {what} {path}: no such file") from exc
    except ValueError as exc:
        raise DataError(f"{what} {path} is not a readable WAV: {exc}") from exc
    if rate != sample_rate:
        raise DataError(
            f"{what} {path}: sample rate {rate} Hz, expected {sample_rate} Hz"
        )
    if samples.shape[0] != channels:
        raise DataError(
            f"{what} {path}: {samples.shape[0]} channels, expected {channels}"
        )
    return samples


def _load_scenario_file(path: Path):
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read scenario {path}: {exc.strerror}") from exc
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"scenario {path} is not valid JSON: {exc.msg}") from exc
    try:
        return scenario_from_dict(obj)
    except ValueError as exc:
        raise DataError(f"scenario {path}: {exc}") from exc


def _resolve_scenario(name_or_path: str, duration, seed):
    """A path wins over a preset name; overrides apply after either."""
    path = Path(name_or_path)
    if path.is_file():
        scenario = _load_scenario_file(path)
        changes = {}
        if duration is not None:
            changes["duration"] = duration
        if seed is not None:
            changes["seed"] = seed
        if changes:
            try:
                scenario = dataclasses.replace(scenario, **changes)
            except ValueError as exc:
                raise UsageError(str(exc)) from exc
        return scenario, path.stem
    try:
        return preset(name_or_path, duration=duration, seed=seed or 0), name_or_path
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _load_records(path, what: str) -> list[dict]:
    try:
        return reporting.load_records(path)
    except FileNotFoundError as exc:
        raise DataError(f"cannot read {what} {path}: no such file") from exc
    except ValueError as exc:
        raise DataError(str(exc)) from exc


def _sidecar_lines(result) -> list[str]:
    """Telemetry records plus the echo-canceller power tap, one JSON per line."""
    lines = []
    for record, powers in zip(result.records, result.aec_powers):
        obj = record.as_dict()
        if powers is not None:
            obj["aec"] = {"in_power": powers[0], "out_power": powers[1]}
        lines.append(json.dumps(obj, separators=(",", ":")))
    return lines


def _json_line(obj) -> str:
    return json.dumps(obj, separators=(",", ":"))


# ---------------------------------------------------------------------------
# process


def cmd_process(args) -> int:
    config = _run_config(args)
    fmt = config.fmt
    mic = _read_wav_checked(args.input, fmt.sample_rate, fmt.channels, "input")
    far = None
    if args.far is not None:
        far = _read_wav_checked(args.far, fmt.sample_rate, 1, "far-end reference")[0]

    result = run_file_pipeline(mic, far, config, seed=args.seed or 0)

    out = Path(args.out)
    metrics_path = (
        Path(args.metrics)
        if args.metrics is not None
        else out.with_suffix(".metrics.jsonl")
    )
    samples = result.six if args.mode == "six_channel" else result.processed
    write_wav(out, fmt.sample_rate, samples, dtype=args.dtype)
    metrics_path.write_text("\n".join(_sidecar_lines(result)) + "\n")

    duration = mic.shape[1] / fmt.sample_rate
    print(
        f"processed {duration:.1f} s ({len(result.records)} frames) in "
        f"{args.mode} mode"
    )
    print(
        f"switches {result.switch_count}  retargets {result.retarget_count}  "
        f"latency {result.latency_samples} samples"
    )
    print(f"wrote {out} and {metrics_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate


def _scene_meta(name, scenario, gt, config, files) -> dict:
    pose = scenario.array_pose
    return {
        "kind": "scene",
        "name": name,
        "seed": scenario.seed,
        "duration_s": scenario.duration,
        "sample_rate": config.fmt.sample_rate,
        "frame_rate": config.fmt.sample_rate / config.fmt.hop_len,
        "room": list(scenario.room),
        "absorption": np.atleast_1d(
            np.asarray(scenario.absorption, dtype=np.float64)
        ).tolist(),
        "array": {
            "position": list(pose.position),
            "yaw_deg": pose.yaw_deg,
            "mic_positions": pose.mic_positions(config.geometry).tolist(),
        },
        "sources": [
            {
                "name": spec.name,
                "gain_db": spec.gain_db,
                "kind": spec.kind,
                "far_end_reference": spec.far_end_reference,
                "start_position": list(spec.trajectory[0][1:]),
            }
            for spec in scenario.sources
        ],
        "files": files,
    }


def cmd_simulate(args) -> int:
    config = _run_config(args)
    scenario, name = _resolve_scenario(args.scene, args.duration, args.seed)

    log.info("rendering %s: %.1f s, %d sources", name, scenario.duration,
             len(scenario.sources))
    mics, gt = render_scenario(scenario, config.geometry, config.fmt)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {
        "mics": "mics.wav",
        "truth": "truth.jsonl",
        "clean": {n: f"clean_{n}.wav" for n in gt.names},
    }
    write_wav(out_dir / files["mics"], config.fmt.sample_rate, mics, dtype="float32")
    with open(out_dir / files["truth"], "w", encoding="utf-8") as fh:
        for record in ground_truth_records(gt):
            fh.write(_json_line(record) + "\n")
    for i, source_name in enumerate(gt.names):
        write_wav(
            out_dir / files["clean"][source_name],
            config.fmt.sample_rate,
            gt.clean[i],
            dtype="float32",
        )
    if gt.far_end is not None:
        files["far"] = "far.wav"
        write_wav(out_dir / files["far"], config.fmt.sample_rate, gt.far_end,
                  dtype="float32")
    (out_dir / "scene.json").write_text(
        json.dumps(_scene_meta(name, scenario, gt, config, files), indent=2) + "\n"
    )

    print(f"scene {name}: {scenario.duration:.1f} s, seed {scenario.seed}, "
          f"{len(gt.names)} sources")
    print(f"wrote {out_dir}/{{{files['mics']}, {files['truth']}, scene.json, ...}}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate


def _truth_frame_rate(truths: list[dict]) -> float:
    if len(truths) < 2:
        raise DataError("ground truth too short to establish a frame clock")
    span = truths[-1]["time"] - truths[0]["time"]
    if span <= 0:
        raise DataError("ground truth times are not increasing")
    return (len(truths) - 1) / span


def _pick_reference_source(records, truths, names, wanted) -> int:
    """Which source the listener was following, the one segmental SNR scores."""
    if wanted is not None:
        if wanted not in names:
            raise UsageError(
                f"no source named {wanted!r}; sources: {', '.join(names)}"
            )
        return names.index(wanted)
    matches = [0] * len(names)
    for record, truth in zip(records, truths):
        az = record.get("selected_azimuth")
        if az is None:
            continue
        best, best_err = None, math.inf
        for idx, source in enumerate(truth["sources"]):
            if not source["active"]:
                continue
            err = abs((source["azimuth"] - az + 180.0) % 360.0 - 180.0)
            if err < best_err:
                best, best_err = idx, err
        if best is not None and best_err <= reporting.TRACK_MATCH_TOL_DEG:
            matches[best] += 1
    return int(np.argmax(matches)) if any(matches) else 0


def _add_scene_seg_snr(report, records, truths, args) -> None:
    scene_dir = Path(args.scene)
    meta_path = scene_dir / "scene.json"
    if not meta_path.is_file():
        raise DataError(f"no scene.json in {scene_dir}")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{meta_path} is not valid JSON: {exc.msg}") from exc

    rate = int(meta["sample_rate"])
    mics = _read_wav_checked(
        scene_dir / meta["files"]["mics"], rate,
        len(meta["array"]["mic_positions"]), "scene audio",
    )
    names = [s["name"] for s in meta["sources"]]
    idx = _pick_reference_source(records, truths, names, args.source)
    clean = _read_wav_checked(
        scene_dir / meta["files"]["clean"][names[idx]], rate, 1, "clean reference"
    )[0]

    _, processed = read_wav(args.processed)
    if processed.shape[0] not in (1, 6):
        raise DataError(
            f"processed {args.processed}: {processed.shape[0]} channels, "
            "expected 1 or 6"
        )
    processed = processed[0]

    # The clean reference carries the same propagation delay as the mics, so
    # the residual offset against ch0 is just the chain latency; recover it
    # from the signals rather than trusting any config to match.
    latency = estimate_latency(clean, processed)
    baseline = nearest_mic_channel(
        mics,
        np.asarray(meta["array"]["mic_positions"], dtype=np.float64),
        np.asarray(meta["sources"][idx]["start_position"][:2], dtype=np.float64),
    )
    reporting.add_seg_snr(report, clean, processed, mics, latency, baseline)
    report["seg_snr"]["source"] = names[idx]
    report["seg_snr"]["latency_samples"] = latency


def cmd_evaluate(args) -> int:
    if args.processed is not None and args.scene is None:
        raise UsageError(
            "--processed needs --scene to locate the clean reference and raw mics"
        )
    records = _load_records(args.metrics, "metrics sidecar")
    truths = _load_records(args.truth, "ground truth")
    try:
        reporting.check_frame_clocks(records, truths)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    frame_rate = _truth_frame_rate(truths)

    # Build the whole report before creating any file: a failure here must
    # not leave a partial report directory behind.
    report = reporting.build_report(records, truths, frame_rate)
    reporting.add_erle(report, records, truths, frame_rate)
    if args.processed is not None:
        _add_scene_seg_snr(report, records, truths, args)
    rows = reporting.frame_rows(records, truths)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report["figures"] = reporting.render_figures(records, truths, frame_rate, out_dir)
    (out_dir / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    reporting.write_frame_table(rows, out_dir / "frames.csv")

    print(reporting.format_summary(report))
    print(f"wrote {out_dir}/report.json and {out_dir}/frames.csv")
    return EXIT_OK


# ---------------------------------------------------------------------------
# serve


def _serve_input(args, config):
    """WAV file, scenario file, or preset name, in that order of precedence."""
    fmt = config.fmt
    path = Path(args.input)
    if path.is_file() and path.suffix.lower() == ".wav":
        mic = _read_wav_checked(path, fmt.sample_rate, fmt.channels, "input")
        far = None
        if args.far is not None:
            far = _read_wav_checked(
                args.far, fmt.sample_rate, 1, "far-end reference"
            )[0]
        return mic, far, path.name
    scenario, name = _resolve_scenario(args.input, args.duration, args.seed)
    mics, gt = render_scenario(scenario, config.geometry, config.fmt)
    return mics, gt.far_end, name


def cmd_serve(args) -> int:
    config = _run_config(args)
    mics, far, name = _serve_input(args, config)

    try:
        service, server = serve_array(
            mics,
            far,
            config,
            seed=args.seed or 0,
            tcp_port=args.tcp_port,
            ws_port=args.ws_port,
        )
    except OSError as exc:
        print(f"error: cannot bind control port: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    print(_json_line({
        "kind": "serving",
        "input": name,
        "tcp_port": server.tcp_port,
        "ws_port": server.ws_port,
        "frames": len(service.source),
    }), flush=True)

    interrupted = threading.Event()

    def _stop(signum, frame):
        interrupted.set()
        service.stop()

    previous = [signal.signal(s, _stop) for s in (signal.SIGINT, signal.SIGTERM)]
    try:
        while not service.finished.wait(timeout=0.2):
            pass
    finally:
        for sig, handler in zip((signal.SIGINT, signal.SIGTERM), previous):
            signal.signal(sig, handler)
    service.join()
    server.close()

    if args.out is not None:
        six = service.six_channels()
        samples = six if args.mode == "six_channel" else six[0]
        write_wav(args.out, config.fmt.sample_rate, samples, dtype="float32")
        print(f"wrote {args.out} ({six.shape[1]} samples)")

    print(
        f"served {service.hops_done} hops"
        + (" (interrupted)" if interrupted.is_set() else "")
        + f"  underruns {service.underruns}"
        f"  control messages {service.controls_handled}"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="FILE", help="JSON run configuration")
    common.add_argument(
        "--set",
        metavar="NAME=VALUE",
        action="append",
        default=[],
        dest="overrides",
        help="override one tuning parameter (JSON literal values)",
    )
    common.add_argument("--seed", type=int, default=None, help="deterministic seed")
    common.add_argument(
        "--verbose", action="store_true", help="log per-stage detail to stderr"
    )

    parser = argparse.ArgumentParser(
        prog="hearbeam",
        description="four-mic hearing aid pipeline: process recordings, "
        "simulate rooms, score runs, and serve a live control socket",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser(
        "process", parents=[common], help="run a 4-channel WAV through the pipeline"
    )
    p.add_argument("input", help="4-channel input WAV")
    p.add_argument("--out", required=True, metavar="WAV", help="output WAV path")
    p.add_argument("--far", metavar="WAV", help="mono far-end reference WAV")
    p.add_argument(
        "--mode",
        choices=("mono", "six_channel"),
        default="mono",
        help="write the listener channel alone or the full six-channel frame",
    )
    p.add_argument(
        "--metrics",
        metavar="PATH",
        help="metrics sidecar path (default: output with .metrics.jsonl suffix)",
    )
    p.add_argument("--dtype", choices=("float32", "int16"), default="float32")
    p.set_defaults(func=cmd_process)

    p = sub.add_parser(
        "simulate", parents=[common], help="render a room scene to disk"
    )
    p.add_argument(
        "scene",
        help=f"preset name ({', '.join(PRESET_NAMES)}) or a scenario JSON file",
    )
    p.add_argument("--out", required=True, metavar="DIR", help="output directory")
    p.add_argument("--duration", type=float, metavar="S", help="override length")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser(
        "evaluate", parents=[common], help="score a run against ground truth"
    )
    p.add_argument("metrics", help="metrics sidecar (JSON lines)")
    p.add_argument("truth", help="ground-truth sidecar (JSON lines)")
    p.add_argument("--out", required=True, metavar="DIR", help="report directory")
    p.add_argument(
        "--processed", metavar="WAV", help="processed output, for segmental SNR"
    )
    p.add_argument(
        "--scene", metavar="DIR", help="simulate output directory with scene.json"
    )
    p.add_argument(
        "--source", metavar="NAME", help="which source segmental SNR scores"
    )
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser(
        "serve", parents=[common], help="run the pipeline behind a control socket"
    )
    p.add_argument("input", help="4-channel WAV, scenario JSON, or preset name")
    p.add_argument("--out", metavar="WAV", help="write the output when done")
    p.add_argument("--far", metavar="WAV", help="mono far-end reference WAV")
    p.add_argument("--tcp-port", type=int, default=8765, metavar="PORT")
    p.add_argument("--ws-port", type=int, default=8766, metavar="PORT")
    p.add_argument("--duration", type=float, metavar="S", help="scene length")
    p.add_argument(
        "--mode",
        choices=("mono", "six_channel"),
        default="mono",
        help="what --out writes",
    )
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # runtime faults: I/O mid-run, broken sockets
        log.debug("unhandled failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
