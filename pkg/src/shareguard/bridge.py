"""Streaming boundary between the control loop and a cockpit client.

JSON text messages over WebSocket.  The loop publishes state and decision
updates every tick and a decimated rollout cloud on a configurable stride;
clients send control input and mode toggles.  The loop never blocks on a
client: each client has a bounded queue drained by its own sender thread,
and when the queue overflows the oldest messages are dropped and counted.
Input follows last-writer-wins into a single handoff slot the loop reads
once per tick.

Wire schema (version 1) - every message is {"type", "tick", "payload"}:
  hello            server->client  {"version", "config": <config snapshot>}
  state_update     server->client  {"t", "state": [..]}
  decision_update  server->client  {"mode", "u_h", "u_r", "deviation",
                                    "percent_safe", "n_safe", "fallback_used",
                                    "input_clamped", "input_client_time"}
  rollout_cloud    server->client  {"sample_indices", "step_indices",
                                    "states": [[[..]|null, ..], ..], "fully_safe"}
  trial_event      server->client  {"event", "trial_id", "n_ticks"}
  error            server->client  {"message"}
  input            client->server  {"u": [..], "client_time": <seconds>}
  mode_set         client->server  {"mode": "user_only"|"mpmi"}
"""

from __future__ import annotations

import json
import math
import queue
import threading
import time

import numpy as np

from .errors import ShareguardError
from .metrics import MPMI, USER_ONLY

WIRE_VERSION = 1


def encode(msg_type: str, tick: int, payload: dict) -> str:
    return json.dumps({"type": msg_type, "tick": tick, "payload": payload},
                      sort_keys=True, allow_nan=False)


def _jsonable(vec) -> list:
    return [None if not math.isfinite(v) else float(v) for v in np.asarray(vec, dtype=float)]


class _Client:
    def __init__(self, conn, maxsize: int):
        self.conn = conn
        self.queue: queue.Queue = queue.Queue(maxsize=maxsize)
        self.dropped = 0
        self.sender = threading.Thread(target=self._drain, daemon=True)
        self.sender.start()

    def _drain(self):
        while True:
            item = self.queue.get()
            if item is None:
                return
            try:
                self.conn.send(item)
            except Exception:
                return

    def offer(self, text: str):
        try:
            self.queue.put_nowait(text)
        except queue.Full:
            try:
                self.queue.get_nowait()
                self.dropped += 1
                self.queue.put_nowait(text)
            except (queue.Empty, queue.Full):
                self.dropped += 1

    def close(self):
        try:
            self.queue.put_nowait(None)
        except queue.Full:
            pass


class BridgeInputSource:
    """Single-producer handoff the control loop reads once per tick."""

    def __init__(self, space):
        self.space = space
        self._lock = threading.Lock()
        self._vector = None
        self._clamped = False
        self._client_time = None
        self._event = threading.Event()

    def push(self, vector: np.ndarray, clamped: bool, client_time):
        with self._lock:
            self._vector = vector
            self._clamped = clamped
            self._client_time = client_time
        self._event.set()

    def get(self, tick, t, state):
        with self._lock:
            return None if self._vector is None else self._vector.copy()

    @property
    def last_clamped(self) -> bool:
        with self._lock:
            return self._clamped

    @property
    def last_client_time(self):
        with self._lock:
            return self._client_time

    def wait_for_input(self, timeout: float | None = None) -> bool:
        ok = self._event.wait(timeout)
        self._event.clear()
        return ok


class BridgeServer:
    """Publishes loop telemetry and receives operator input."""

    def __init__(self, space, config_snapshot: dict, host: str = "127.0.0.1",
                 port: int = 8765, queue_size: int = 64,
                 cloud_tick_stride: int = 5, cloud_sample_stride: int = 8,
                 cloud_step_stride: int = 3):
        self.space = space
        self.config_snapshot = config_snapshot
        self.host = host
        self.port = port
        self.queue_size = queue_size
        self.cloud_tick_stride = max(1, cloud_tick_stride)
        self.cloud_sample_stride = max(1, cloud_sample_stride)
        self.cloud_step_stride = max(1, cloud_step_stride)
        self.input_source = BridgeInputSource(space)
        self._clients: dict[int, _Client] = {}
        self._clients_lock = threading.Lock()
        self._mode_request = None
        self._server = None
        self._thread = None

    # -- lifecycle ---------------------------------------------------------

    def start(self):
        from websockets.sync.server import serve
        try:
            self._server = serve(self._handler, self.host, self.port)
        except OSError as e:
            raise ShareguardError(
                f"bridge cannot listen on {self.host}:{self.port}: {e}") from e
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self):
        with self._clients_lock:
            clients = list(self._clients.values())
            self._clients.clear()
        for c in clients:
            c.close()
        if self._server is not None:
            self._server.shutdown()
        if self._thread is not None:
            self._thread.join(timeout=5)

    # -- client side -------------------------------------------------------

    def _handler(self, conn):
        client = _Client(conn, self.queue_size)
        client.offer(encode("hello", 0, {
            "version": WIRE_VERSION, "config": self.config_snapshot}))
        with self._clients_lock:
            self._clients[id(client)] = client
        try:
            for raw in conn:
                self._on_message(client, raw)
        except Exception:
            pass
        finally:
            with self._clients_lock:
                self._clients.pop(id(client), None)
            client.close()

    def _on_message(self, client: _Client, raw):
        try:
            msg = json.loads(raw)
            mtype = msg["type"]
            payload = msg.get("payload", {})
        except (json.JSONDecodeError, TypeError, KeyError) as e:
            client.offer(encode("error", -1, {"message": f"malformed message: {e}"}))
            return
        if mtype == "input":
            try:
                u = np.asarray([float(v) for v in payload["u"]], dtype=float)
                if u.shape != (self.space.dims,) or not np.all(np.isfinite(u)):
                    raise ValueError(f"input vector must be {self.space.dims} finite floats")
            except (KeyError, TypeError, ValueError) as e:
                client.offer(encode("error", -1, {"message": f"bad input payload: {e}"}))
                return
            clamped_vec, clamped = self.space.clamp(u)
            self.input_source.push(clamped_vec, clamped, payload.get("client_time"))
        elif mtype == "mode_set":
            mode = payload.get("mode")
            if mode in (USER_ONLY, MPMI):
                self._mode_request = mode
            else:
                client.offer(encode("error", -1, {"message": f"unknown mode {mode!r}"}))
        else:
            client.offer(encode("error", -1, {"message": f"unknown message type {mtype!r}"}))

    # -- loop side ---------------------------------------------------------

    def mode_provider(self):
        return self._mode_request

    def _broadcast(self, text: str):
        with self._clients_lock:
            clients = list(self._clients.values())
        for c in clients:
            c.offer(text)

    def trial_event(self, event: str, trial_id: str, n_ticks: int):
        self._broadcast(encode("trial_event", n_ticks, {
            "event": event, "trial_id": trial_id, "n_ticks": n_ticks}))

    def __call__(self, tick: int, state, decision):
        """Per-tick sink for the control loop; never blocks."""
        self._broadcast(encode("state_update", tick, {
            "t": tick, "state": _jsonable(state)}))
        self._broadcast(encode("decision_update", tick, {
            "mode": decision.mode,
            "u_h": _jsonable(decision.u_h),
            "u_r": _jsonable(decision.u_r),
            "deviation": decision.deviation,
            "percent_safe": decision.percent_safe,
            "n_safe": decision.n_safe,
            "fallback_used": decision.fallback_used,
            "input_clamped": decision.input_clamped or self.input_source.last_clamped,
            "input_client_time": self.input_source.last_client_time,
        }))
        batch = decision.batch
        if batch is not None and tick % self.cloud_tick_stride == 0:
            sample_idx = list(range(0, batch.n, self.cloud_sample_stride))
            step_idx = list(range(0, batch.t_steps + 1, self.cloud_step_stride))
            states = [
                [_jsonable(batch.trajectories[i, s])
                 if np.all(np.isfinite(batch.trajectories[i, s])) else None
                 for s in step_idx]
                for i in sample_idx
            ]
            self._broadcast(encode("rollout_cloud", tick, {
                "sample_indices": sample_idx,
                "step_indices": step_idx,
                "states": states,
                "fully_safe": [bool(batch.fully_safe[i]) for i in sample_idx],
            }))

    @property
    def total_dropped(self) -> int:
        with self._clients_lock:
            return sum(c.dropped for c in self._clients.values())
