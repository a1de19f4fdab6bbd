"""Network gateway through which live human supervisors drive allocated robots.

The simulation stays lock-step: each timestep the runner hands this service
one request per allocated robot, the service streams an assignment offer and
observation to the matching supervisor console, and the simulation clock
does not advance until every one of them has answered. Answers must echo
the timestep of the observation they answer; anything stale is rejected and
discarded. A hard reset occupies its human for the full reset duration, one
acknowledgment per frozen timestep.

Transport is WebSocket (RFC 6455) over TCP, implemented here directly on
blocking sockets so browser consoles can connect natively: every message is
one JSON document in one text frame, and the frame header provides the
length delimiting. Connections authenticate with a shared token in the
``hello`` message, which also negotiates the protocol version and carries
the static environment description. At most ``m_humans`` sessions are
accepted; extra connections get ``error("fleet_full")`` and are closed.
See PROTOCOL.md for the full message reference.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import socket
import struct
import threading
import time
from typing import Optional

from .envs import GridEnv, HARD_RESET_TOKEN, KIND_HARD_RESET, SupervisorAction

PROTOCOL_VERSION = 1
_WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"


class GatewayTimeout(RuntimeError):
    """Raised when an answer did not arrive within the configured timeout."""


# -- minimal RFC 6455 framing (text frames, no fragmentation) -----------------


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ConnectionError("socket closed")
        buf += chunk
    return buf


def _accept_key(key: str) -> str:
    digest = hashlib.sha1((key + _WS_GUID).encode()).digest()
    return base64.b64encode(digest).decode()


def _read_http_headers(sock: socket.socket) -> tuple[str, dict]:
    data = b""
    while b"\r\n\r\n" not in data:
        chunk = sock.recv(4096)
        if not chunk:
            raise ConnectionError("socket closed during handshake")
        data += chunk
        if len(data) > 65536:
            raise ConnectionError("oversized handshake")
    head = data.split(b"\r\n\r\n", 1)[0].decode("latin-1")
    lines = head.split("\r\n")
    headers = {}
    for line in lines[1:]:
        if ":" in line:
            name, value = line.split(":", 1)
            headers[name.strip().lower()] = value.strip()
    return lines[0], headers


def ws_handshake_server(sock: socket.socket) -> None:
    request, headers = _read_http_headers(sock)
    key = headers.get("sec-websocket-key")
    if not request.startswith("GET") or key is None:
        sock.sendall(b"HTTP/1.1 400 Bad Request\r\n\r\n")
        raise ConnectionError("not a websocket upgrade")
    response = (
        "HTTP/1.1 101 Switching Protocols\r\n"
        "Upgrade: websocket\r\n"
        "Connection: Upgrade\r\n"
        f"Sec-WebSocket-Accept: {_accept_key(key)}\r\n\r\n"
    )
    sock.sendall(response.encode())


def ws_handshake_client(sock: socket.socket, host: str, port: int, path: str = "/") -> None:
    key = base64.b64encode(os.urandom(16)).decode()
    request = (
        f"GET {path} HTTP/1.1\r\n"
        f"Host: {host}:{port}\r\n"
        "Upgrade: websocket\r\n"
        "Connection: Upgrade\r\n"
        f"Sec-WebSocket-Key: {key}\r\n"
        "Sec-WebSocket-Version: 13\r\n\r\n"
    )
    sock.sendall(request.encode())
    status, headers = _read_http_headers(sock)
    if "101" not in status or headers.get("sec-websocket-accept") != _accept_key(key):
        raise ConnectionError(f"websocket handshake refused: {status}")


def ws_send_text(sock: socket.socket, text: str, mask: bool = False) -> None:
    payload = text.encode()
    header = bytearray([0x81])  # FIN + text opcode
    n = len(payload)
    mask_bit = 0x80 if mask else 0
    if n < 126:
        header.append(mask_bit | n)
    elif n < 1 << 16:
        header.append(mask_bit | 126)
        header += struct.pack(">H", n)
    else:
        header.append(mask_bit | 127)
        header += struct.pack(">Q", n)
    if mask:
        key = os.urandom(4)
        header += key
        payload = bytes(b ^ key[i % 4] for i, b in enumerate(payload))
    sock.sendall(bytes(header) + payload)


def ws_recv_text(sock: socket.socket) -> Optional[str]:
    """Next text frame's payload, or None once the peer closes."""
    while True:
        first, second = _recv_exact(sock, 2)
        opcode = first & 0x0F
        masked = bool(second & 0x80)
        n = second & 0x7F
        if n == 126:
            n = struct.unpack(">H", _recv_exact(sock, 2))[0]
        elif n == 127:
            n = struct.unpack(">Q", _recv_exact(sock, 8))[0]
        key = _recv_exact(sock, 4) if masked else None
        payload = _recv_exact(sock, n) if n else b""
        if masked:
            payload = bytes(b ^ key[i % 4] for i, b in enumerate(payload))
        if opcode == 0x8:  # close
            return None
        if opcode == 0x9:  # ping -> pong
            pong = bytearray([0x8A, len(payload)]) + payload
            sock.sendall(bytes(pong))
            continue
        if opcode in (0x1, 0x2):
            return payload.decode()
        # pong/continuation frames are ignored


# -- session bookkeeping ----------------------------------------------------------


class _Session:
    def __init__(self, human_id: int, sock: socket.socket):
        self.human_id = human_id
        self.sock = sock
        self.send_lock = threading.Lock()
        self.alive = True

    def send(self, msg: dict) -> bool:
        try:
            with self.send_lock:
                ws_send_text(self.sock, json.dumps(msg))
            return True
        except OSError:
            self.alive = False
            return False


class SupervisorGateway:
    """Lock-step supervision service bound to one fleet run.

    Exposes the same ``gather``/``on_step`` interface as the scripted
    supervisor pool, so the runner treats both identically.
    """

    def __init__(self, host="127.0.0.1", port=8711, m_humans=1, token="fleet",
                 timeout: Optional[float] = None):
        self.host = host
        self.port = port
        self.m_humans = m_humans
        self.token = token
        self.timeout = timeout
        self.env: Optional[GridEnv] = None
        self._listener: Optional[socket.socket] = None
        self._threads: list[threading.Thread] = []
        self._lock = threading.Lock()
        self._answered = threading.Condition(self._lock)
        self._sessions: dict[int, _Session] = {}
        self._pending: dict[int, dict] = {}  # human_id -> outstanding request
        self._answers: dict[int, SupervisorAction] = {}
        self._paused = False
        self._stopping = False
        self.transcript_dir: Optional[str] = None

    # -- lifecycle --------------------------------------------------------

    def start(self, env: GridEnv) -> "SupervisorGateway":
        self.env = env
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        listener.bind((self.host, self.port))
        listener.listen(8)
        self._listener = listener
        if self.port == 0:
            self.port = listener.getsockname()[1]
        thread = threading.Thread(target=self._accept_loop, daemon=True)
        thread.start()
        self._threads.append(thread)
        return self

    def stop(self) -> None:
        self._stopping = True
        with self._lock:
            sessions = list(self._sessions.values())
        for session in sessions:
            try:
                session.sock.close()
            except OSError:
                pass
        if self._listener is not None:
            try:
                self._listener.close()
            except OSError:
                pass

    # -- connection handling -------------------------------------------------

    def _accept_loop(self) -> None:
        while not self._stopping:
            try:
                conn, _ = self._listener.accept()
            except OSError:
                return
            thread = threading.Thread(target=self._serve_connection, args=(conn,), daemon=True)
            thread.start()
            self._threads.append(thread)

    def _serve_connection(self, conn: socket.socket) -> None:
        session = None
        try:
            ws_handshake_server(conn)
            raw = ws_recv_text(conn)
            if raw is None:
                return
            hello = json.loads(raw)
            if hello.get("kind") != "hello":
                self._refuse(conn, "protocol", "expected a hello message")
                return
            if hello.get("version") != PROTOCOL_VERSION:
                self._refuse(conn, "version", f"server speaks version {PROTOCOL_VERSION}")
                return
            if hello.get("token") != self.token:
                self._refuse(conn, "auth", "bad token")
                return
            with self._lock:
                free = [j for j in range(self.m_humans) if j not in self._sessions]
                if not free:
                    refuse = True
                else:
                    refuse = False
                    session = _Session(free[0], conn)
                    self._sessions[session.human_id] = session
            if refuse:
                self._refuse(conn, "fleet_full", "all supervisor seats are taken")
                return
            session.send(
                {
                    "kind": "hello",
                    "version": PROTOCOL_VERSION,
                    "human_id": session.human_id,
                    "m_humans": self.m_humans,
                    "env": self._env_info(),
                }
            )
            self._log(session.human_id, "connect", {})
            with self._lock:
                request = self._pending.get(session.human_id)
            if request is not None:
                self._offer(session, request)  # re-offer after a reconnect
            self._reader_loop(session)
        except (ConnectionError, json.JSONDecodeError, OSError):
            pass
        finally:
            if session is not None:
                with self._lock:
                    if self._sessions.get(session.human_id) is session:
                        del self._sessions[session.human_id]
                self._log(session.human_id, "disconnect", {})
            try:
                conn.close()
            except OSError:
                pass

    def _refuse(self, conn: socket.socket, code: str, detail: str) -> None:
        try:
            ws_send_text(conn, json.dumps({"kind": "error", "code": code, "detail": detail}))
        except OSError:
            pass

    def _env_info(self) -> dict:
        env = self.env
        return {
            "name": env.name,
            "width": env.width,
            "height": env.height,
            "fault_cells": sorted(list(c) for c in env.fault_cells),
            "action_names": ["up", "down", "left", "right"],
        }

    # -- runner-facing interface ---------------------------------------------------

    def gather(self, requests: list[dict], fleet) -> dict[int, SupervisorAction]:
        """Block until every allocated human has answered for this timestep."""
        if not requests:
            return {}
        deadline = None if self.timeout is None else time.monotonic() + self.timeout
        with self._lock:
            self._pending = {req["human"]: req for req in requests}
            self._answers = {}
            for req in requests:
                req["observation"] = self._observation(req, fleet)
                session = self._sessions.get(req["human"])
                if session is not None:
                    self._offer(session, req)
            if any(req["human"] not in self._sessions for req in requests):
                self._broadcast_locked({"kind": "pause", "reason": "waiting_for_supervisors"})
                self._paused = True
            while len(self._answers) < len(requests):
                wait = None if deadline is None else deadline - time.monotonic()
                if wait is not None and wait <= 0:
                    self._broadcast_locked({"kind": "pause", "reason": "timeout"})
                    self._paused = True
                    self._pending = {}
                    raise GatewayTimeout("supervisor answers did not arrive in time")
                self._answered.wait(timeout=min(wait, 0.5) if wait is not None else 0.5)
                if self._stopping:
                    raise GatewayTimeout("gateway stopped while waiting for answers")
            if self._paused:
                self._broadcast_locked({"kind": "resume"})
                self._paused = False
            answers = {req["robot"]: self._answers[req["human"]] for req in requests}
            self._pending = {}
            self._answers = {}
            return answers

    def on_step(self, record) -> None:
        msg = {
            "kind": "metrics_tick",
            "t": record.t,
            "cum_successes": record.cum_successes,
            "cum_hard_resets": record.cum_hard_resets,
            "cum_idle_time": record.cum_idle_time,
            "cum_human_steps": record.cum_human_steps,
            "rohe": record.rohe,
        }
        with self._lock:
            self._broadcast_locked(msg)

    # -- helpers ---------------------------------------------------------------------

    def _observation(self, req: dict, fleet) -> dict:
        state = fleet.robots[req["robot"]]
        return {
            "kind": "observation",
            "t": req["t"],
            "robot_id": req["robot"],
            "cell": list(state.env_state),
            "goal": list(state.goal) if state.goal is not None else None,
            "episode_step": state.episode_step,
            "fault": self.env.is_fault(state.env_state),
        }

    def _offer(self, session: _Session, req: dict) -> None:
        offer = {
            "kind": "assignment_offer",
            "t": req["t"],
            "robot_id": req["robot"],
            "intervention": req["kind"],
            "steps_remaining": req["steps_remaining"],
        }
        session.send(offer)
        observation = req.get("observation")
        if observation is not None:
            session.send(observation)
        self._log(session.human_id, "offer", offer)

    def _broadcast_locked(self, msg: dict) -> None:
        for session in list(self._sessions.values()):
            session.send(msg)

    def _log(self, human_id: int, event: str, payload: dict) -> None:
        if self.transcript_dir is None:
            return
        path = os.path.join(self.transcript_dir, f"session_{human_id}.jsonl")
        with open(path, "a") as fh:
            fh.write(json.dumps({"event": event, **payload}, sort_keys=True) + "\n")

    # -- per-session reader ------------------------------------------------------------

    def _reader_loop(self, session: _Session) -> None:
        while session.alive and not self._stopping:
            raw = ws_recv_text(session.sock)
            if raw is None:
                return
            try:
                msg = json.loads(raw)
            except json.JSONDecodeError:
                session.send({"kind": "error", "code": "malformed", "detail": "not JSON"})
                continue
            self._log(session.human_id, "recv", msg)
            kind = msg.get("kind")
            if kind not in ("action", "hard_reset_ack"):
                session.send({"kind": "error", "code": "unexpected", "detail": f"{kind}?"})
                continue
            with self._lock:
                req = self._pending.get(session.human_id)
                if req is None or session.human_id in self._answers:
                    session.send({"kind": "error", "code": "no_request",
                                  "detail": "nothing to answer"})
                    continue
                if msg.get("t") != req["t"]:
                    session.send({"kind": "error", "code": "stale",
                                  "detail": f"expected t={req['t']}"})
                    continue
                if req["kind"] == KIND_HARD_RESET:
                    if kind != "hard_reset_ack":
                        session.send({"kind": "error", "code": "expected_ack",
                                      "detail": "this step is a hard reset"})
                        continue
                    answer = SupervisorAction(HARD_RESET_TOKEN)
                else:
                    if kind != "action":
                        session.send({"kind": "error", "code": "expected_action",
                                      "detail": "this step is teleoperation"})
                        continue
                    value = msg.get("action")
                    if not isinstance(value, int) or not 0 <= value < self.env.spec.action_arity:
                        session.send({"kind": "error", "code": "invalid_action",
                                      "detail": f"action must be 0..{self.env.spec.action_arity - 1}"})
                        continue
                    answer = SupervisorAction(value)
                self._answers[session.human_id] = answer
                self._answered.notify_all()


def serve(host: str, port: int, env: GridEnv, m_humans: int, token: str = "fleet",
          timeout: Optional[float] = None) -> SupervisorGateway:
    """Start a gateway bound to ``host:port`` and return the running service."""
    return SupervisorGateway(host, port, m_humans, token, timeout).start(env)


# -- synchronous client (scripted supervisors, tests, terminals) --------------------


class ConsoleClient:
    """Blocking WebSocket client speaking the gateway protocol."""

    def __init__(self, host: str, port: int, token: str = "fleet"):
        self.host = host
        self.port = port
        self.token = token
        self.sock: Optional[socket.socket] = None
        self.hello: Optional[dict] = None

    def connect(self, timeout: Optional[float] = 5.0) -> dict:
        sock = socket.create_connection((self.host, self.port), timeout=timeout)
        ws_handshake_client(sock, self.host, self.port)
        self.sock = sock
        self.send({"kind": "hello", "version": PROTOCOL_VERSION, "token": self.token})
        reply = self.recv(timeout)
        if reply is None or reply.get("kind") == "error":
            raise ConnectionError(f"gateway refused session: {reply}")
        self.hello = reply
        return reply

    def send(self, msg: dict) -> None:
        ws_send_text(self.sock, json.dumps(msg), mask=True)

    def recv(self, timeout: Optional[float] = None) -> Optional[dict]:
        self.sock.settimeout(timeout)
        raw = ws_recv_text(self.sock)
        return None if raw is None else json.loads(raw)

    def recv_kind(self, kind: str, timeout: float = 5.0, discard=()) -> dict:
        """Read until a message of ``kind`` arrives, skipping listed kinds."""
        deadline = time.monotonic() + timeout
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise TimeoutError(f"no {kind!r} message within {timeout}s")
            msg = self.recv(timeout=remaining)
            if msg is None:
                raise ConnectionError("gateway closed the stream")
            if msg["kind"] == kind:
                return msg
            if msg["kind"] in discard or msg["kind"] == "metrics_tick":
                continue
            raise AssertionError(f"unexpected {msg['kind']!r} while waiting for {kind!r}: {msg}")

    def close(self) -> None:
        if self.sock is not None:
            try:
                self.sock.close()
            except OSError:
                pass
            self.sock = None
