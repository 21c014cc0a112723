"""Real-time pipeline service with TCP and WebSocket control/telemetry.

One thread owns the pipeline and its clock; it is the only writer of
audio state. Control connections hand lines to the service, which swaps
a fresh TuningState in under a lock for the pipeline to read at the next
hop boundary, so a message can never tear a frame. Telemetry fans out
through the hub's bounded drop-oldest buffers: a stalled viewer loses
records, never audio.
"""

import json
import logging
import socket
import threading
import time

import numpy as np
from websockets.exceptions import ConnectionClosed
from websockets.sync.server import serve as ws_serve

from hearbeam.config import PipelineConfig
from hearbeam.deviceio import TelemetryHub, handle_control_line
from hearbeam.dsp import frame_stream
from hearbeam.pipeline import Pipeline

log = logging.getLogger(__name__)

TELEMETRY_POLL_S = 0.008  # half a hop at the default format


class HopSource:
    """Pre-rendered input hops plus an optional far-end feed.

    hop(i) returning None means the input was not ready in time; the
    service substitutes silence for that quantum. A memory-backed source
    never underruns, but live capture behind the same interface can.
    """

    def __init__(self, mics: np.ndarray, far: np.ndarray | None, fmt):
        mics = np.atleast_2d(np.asarray(mics, dtype=np.float64))
        if mics.shape[0] != fmt.channels:
            raise ValueError(
                f"expected {fmt.channels} mic channels, got {mics.shape[0]}"
            )
        self.fmt = fmt
        self._frames = frame_stream(list(mics), fmt)
        self._far = None
        if far is not None:
            far = np.asarray(far, dtype=np.float64).ravel()
            if len(far) < mics.shape[1]:
                far = np.pad(far, (0, mics.shape[1] - len(far)))
            self._far = far

    def __len__(self) -> int:
        return len(self._frames)

    def hop(self, i: int):
        far_hop = None
        if self._far is not None:
            hop = self.fmt.hop_len
            far_hop = self._far[i * hop : (i + 1) * hop]
            if len(far_hop) < hop:
                far_hop = np.pad(far_hop, (0, hop - len(far_hop)))
        return self._frames[i].samples, far_hop


class PipelineService:
    """Paced pipeline run plus thread-safe control handling."""

    def __init__(
        self,
        source,
        config: PipelineConfig | None = None,
        seed: int = 0,
        realtime: bool = True,
    ):
        self.config = config or PipelineConfig()
        self.source = source
        self.realtime = realtime
        self.hub = TelemetryHub()
        self.pipeline = Pipeline(self.config, seed=seed, hub=self.hub)
        self.live_ids: frozenset[int] = frozenset()
        self.underruns = 0
        self.controls_handled = 0
        self.hops_done = 0
        self.finished = threading.Event()
        self._chunks: list[np.ndarray] = []
        self._control_lock = threading.Lock()
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    def start(self) -> None:
        self._thread = threading.Thread(
            target=self._run, name="pipeline", daemon=True
        )
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()

    def join(self, timeout: float | None = None) -> None:
        if self._thread is not None:
            self._thread.join(timeout)

    def _run(self) -> None:
        fmt = self.config.fmt
        start = time.monotonic()
        try:
            for i in range(len(self.source)):
                if self._stop.is_set():
                    break
                if self.realtime:
                    wait = start + i * fmt.hop_duration - time.monotonic()
                    if wait > 0:
                        time.sleep(wait)
                pair = self.source.hop(i)
                if pair is None:
                    self.underruns += 1
                    log.warning("input underrun at hop %d, inserting silence", i)
                    mic_hop = np.zeros((fmt.channels, fmt.hop_len))
                    far_hop = None
                else:
                    mic_hop, far_hop = pair
                result = self.pipeline.process_hop(mic_hop, far_hop)
                # Snapshot for control validation; plain assignment is the
                # atomic handoff to control threads.
                self.live_ids = frozenset(
                    s["id"] for s in result.telemetry.sources
                )
                self._chunks.append(result.six.samples)
                self.hops_done += 1
        finally:
            self.finished.set()

    def handle_line(self, line: str) -> str:
        """Apply one control line; returns the serialized reply."""
        with self._control_lock:
            reply, tuning = handle_control_line(
                line, self.pipeline.tuning, self.live_ids
            )
            self.pipeline.tuning = tuning
            self.controls_handled += 1
        return json.dumps(reply, separators=(",", ":"))

    def six_channels(self) -> np.ndarray:
        """Everything produced so far, (6, n); safe after stop or finish."""
        if not self._chunks:
            return np.zeros((6, 0))
        return np.concatenate(self._chunks, axis=1)


class PipelineServer:
    """TCP and WebSocket front doors speaking the same line protocol.

    Per connection: requests are handled in arrival order and replies
    keep that order; telemetry interleaves from a separate pump thread.
    Port 0 binds an ephemeral port, readable from tcp_port/ws_port.
    """

    def __init__(
        self,
        service: PipelineService,
        tcp_port: int = 0,
        ws_port: int | None = 0,
        host: str = "127.0.0.1",
    ):
        self.service = service
        self.host = host
        self._tcp = socket.create_server((host, tcp_port))
        self.tcp_port = self._tcp.getsockname()[1]
        self._ws = None
        self.ws_port = None
        if ws_port is not None:
            self._ws = ws_serve(self._ws_handler, host, ws_port)
            self.ws_port = self._ws.socket.getsockname()[1]
        self._closing = threading.Event()
        self._threads: list[threading.Thread] = []

    def start(self) -> None:
        acceptor = threading.Thread(target=self._accept_loop, daemon=True)
        acceptor.start()
        self._threads.append(acceptor)
        if self._ws is not None:
            runner = threading.Thread(target=self._ws.serve_forever, daemon=True)
            runner.start()
            self._threads.append(runner)

    def close(self) -> None:
        self._closing.set()
        try:
            self._tcp.close()
        except OSError:
            pass
        if self._ws is not None:
            self._ws.shutdown()

    def _accept_loop(self) -> None:
        while not self._closing.is_set():
            try:
                conn, _ = self._tcp.accept()
            except OSError:
                return
            worker = threading.Thread(
                target=self._tcp_client, args=(conn,), daemon=True
            )
            worker.start()

    def _tcp_client(self, conn: socket.socket) -> None:
        sub = self.service.hub.subscribe()
        write_lock = threading.Lock()
        gone = threading.Event()

        def send(line: str) -> None:
            with write_lock:
                conn.sendall(line.encode("utf-8") + b"\n")

        pump = threading.Thread(
            target=self._pump_telemetry, args=(sub, send, gone), daemon=True
        )
        pump.start()
        try:
            with conn.makefile("r", encoding="utf-8") as reader:
                for line in reader:
                    line = line.strip()
                    if line:
                        send(self.service.handle_line(line))
        except OSError:
            pass
        finally:
            gone.set()
            sub.close()
            try:
                conn.close()
            except OSError:
                pass

    def _ws_handler(self, ws) -> None:
        sub = self.service.hub.subscribe()
        gone = threading.Event()

        def send(line: str) -> None:
            ws.send(line)  # sync connections serialize concurrent sends

        pump = threading.Thread(
            target=self._pump_telemetry, args=(sub, send, gone), daemon=True
        )
        pump.start()
        try:
            for message in ws:
                if isinstance(message, bytes):
                    message = message.decode("utf-8", "replace")
                line = message.strip()
                if line:
                    ws.send(self.service.handle_line(line))
        except (ConnectionClosed, OSError):
            pass
        finally:
            gone.set()
            sub.close()

    @staticmethod
    def _pump_telemetry(sub, send, gone: threading.Event) -> None:
        while not gone.is_set():
            for line in sub.drain():
                try:
                    send(line)
                except (OSError, ConnectionClosed):
                    return
            time.sleep(TELEMETRY_POLL_S)


def serve_array(
    mics: np.ndarray,
    far: np.ndarray | None = None,
    config: PipelineConfig | None = None,
    seed: int = 0,
    tcp_port: int = 0,
    ws_port: int | None = 0,
    realtime: bool = True,
) -> tuple[PipelineService, PipelineServer]:
    """Wire up and start a service + server pair over in-memory audio."""
    config = config or PipelineConfig()
    service = PipelineService(
        HopSource(mics, far, config.fmt), config, seed=seed, realtime=realtime
    )
    server = PipelineServer(service, tcp_port=tcp_port, ws_port=ws_port)
    server.start()
    service.start()
    return service, server
