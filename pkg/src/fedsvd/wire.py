"""Binary frames for client updates and global weights, and a one-round TCP service.

Frame layout (all integers little-endian)::

    magic       4 bytes  b"FDW1"
    msg_type    u8       0x01 update, 0x02 weights, 0x03 ack, 0x7F error
    payload_len u64
    payload     payload_len bytes

Update payload::

    num_classes u32, num_features u32, then per class:
        rank u32
        us    rank * num_features float64, column-major
        m_vec num_features float64

Weights payload::

    num_features u32, num_classes u32, activation u8, epsilon_clip f64,
    lambda f64, w num_features * num_classes float64, column-major

Error payloads are UTF-8 text; ack payloads are empty.
"""

from __future__ import annotations

import logging
import socket
import struct
import threading
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, encode_targets
from .errors import ArgumentError, ProtocolError, RemoteError, ShapeError, TransportError
from .model import (
    AggregateState,
    ClientUpdate,
    ModelWeights,
    OutputUpdate,
    add_bias,
    fit_client,
    incorporate,
    solve_weights,
)
from .numeric import LOGISTIC, ActivationKind, ActivationSpec

log = logging.getLogger(__name__)

MAGIC = b"FDW1"
MSG_UPDATE = 0x01
MSG_WEIGHTS = 0x02
MSG_ACK = 0x03
MSG_ERROR = 0x7F
MSG_TYPES = frozenset({MSG_UPDATE, MSG_WEIGHTS, MSG_ACK, MSG_ERROR})

_HEADER = struct.Struct("<4sBQ")
HEADER_SIZE = _HEADER.size
MAX_PAYLOAD = 1 << 31

_U32 = struct.Struct("<I")
_F64 = np.dtype("<f8")
_ACTIVATION_CODES = {ActivationKind.LOGISTIC: 0}
_ACTIVATION_KINDS = {v: k for k, v in _ACTIVATION_CODES.items()}
_WEIGHTS_HEAD = struct.Struct("<IIBdd")


def encode_frame(msg_type: int, payload: bytes = b"") -> bytes:
    if msg_type not in MSG_TYPES:
        raise ProtocolError(f"unknown message type 0x{msg_type:02x}")
    return _HEADER.pack(MAGIC, msg_type, len(payload)) + payload


def parse_header(header: bytes) -> tuple[int, int]:
    """Validate a frame header; returns ``(msg_type, payload_len)``."""
    if len(header) < HEADER_SIZE:
        raise ProtocolError(f"truncated frame header ({len(header)} bytes)", len(header))
    magic, msg_type, length = _HEADER.unpack_from(header)
    if magic != MAGIC:
        raise ProtocolError(f"bad magic {magic!r}", 0)
    if msg_type not in MSG_TYPES:
        raise ProtocolError(f"unknown message type 0x{msg_type:02x}", 4)
    if length > MAX_PAYLOAD:
        raise ProtocolError(f"declared payload length {length} exceeds limit {MAX_PAYLOAD}", 5)
    return msg_type, length


def decode_frame(buf: bytes) -> tuple[int, bytes]:
    msg_type, length = parse_header(buf)
    available = len(buf) - HEADER_SIZE
    if length > available:
        raise ProtocolError(f"payload length {length} exceeds the {available} bytes present",
                            HEADER_SIZE)
    if length < available:
        raise ProtocolError(f"{available - length} trailing bytes after frame",
                            HEADER_SIZE + length)
    return msg_type, bytes(buf[HEADER_SIZE:])


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = memoryview(buf)
        self.pos = 0

    def need(self, n: int, what: str) -> None:
        if n > len(self.buf) - self.pos:
            raise ProtocolError(f"buffer too short for {what}: need {n} bytes, "
                                f"{len(self.buf) - self.pos} left", self.pos)

    def u32(self, what: str) -> int:
        self.need(4, what)
        (v,) = _U32.unpack_from(self.buf, self.pos)
        self.pos += 4
        return v

    def f64(self, count: int, what: str) -> np.ndarray:
        self.need(8 * count, what)
        out = np.frombuffer(self.buf, dtype=_F64, count=count, offset=self.pos).astype(np.float64)
        self.pos += 8 * count
        return out

    def done(self) -> None:
        if self.pos != len(self.buf):
            raise ProtocolError(f"{len(self.buf) - self.pos} unexpected trailing bytes", self.pos)


def update_payload_size(num_features: int, ranks) -> int:
    return 8 + sum(4 + 8 * num_features * (r + 1) for r in ranks)


def encode_update_payload(u: ClientUpdate) -> bytes:
    nf = u.num_features
    parts = [_U32.pack(u.num_classes), _U32.pack(nf)]
    for out in u.per_output:
        parts.append(_U32.pack(out.rank))
        parts.append(np.asarray(out.us, dtype=_F64).tobytes(order="F"))
        parts.append(np.asarray(out.m_vec, dtype=_F64).tobytes())
    return b"".join(parts)


def decode_update_payload(payload: bytes) -> ClientUpdate:
    r = _Reader(payload)
    c = r.u32("num_classes")
    nf = r.u32("num_features")
    if c == 0 or nf == 0:
        raise ProtocolError(f"degenerate update dimensions ({c} classes, {nf} features)", 0)
    # every class needs at least its rank word and m-vector
    r.need(c * (4 + 8 * nf), "per-class blocks")
    outputs = []
    for k in range(c):
        rank = r.u32(f"rank of class {k}")
        if rank > nf:
            raise ProtocolError(f"class {k} declares rank {rank} > {nf} features", r.pos - 4)
        us = r.f64(rank * nf, f"us matrix of class {k}").reshape((nf, rank), order="F")
        m_vec = r.f64(nf, f"m vector of class {k}")
        outputs.append(OutputUpdate(np.ascontiguousarray(us), m_vec))
    r.done()
    return ClientUpdate(tuple(outputs))


def encode_update(u: ClientUpdate) -> bytes:
    return encode_frame(MSG_UPDATE, encode_update_payload(u))


def decode_update(buf: bytes) -> ClientUpdate:
    msg_type, payload = decode_frame(buf)
    if msg_type != MSG_UPDATE:
        raise ProtocolError(f"expected an update frame, got type 0x{msg_type:02x}", 4)
    return decode_update_payload(payload)


def encode_weights_payload(w: ModelWeights) -> bytes:
    nf, c = w.w.shape
    head = _WEIGHTS_HEAD.pack(nf, c, _ACTIVATION_CODES[w.activation.kind],
                              w.activation.epsilon_clip, w.lambda_used)
    return head + np.asarray(w.w, dtype=_F64).tobytes(order="F")


def decode_weights_payload(payload: bytes) -> ModelWeights:
    if len(payload) < _WEIGHTS_HEAD.size:
        raise ProtocolError("truncated weights header", len(payload))
    nf, c, code, eps, lam = _WEIGHTS_HEAD.unpack_from(payload)
    if code not in _ACTIVATION_KINDS:
        raise ProtocolError(f"unknown activation code {code}", 8)
    r = _Reader(payload)
    r.pos = _WEIGHTS_HEAD.size
    w = r.f64(nf * c, "weight matrix").reshape((nf, c), order="F")
    r.done()
    return ModelWeights(np.ascontiguousarray(w), ActivationSpec(_ACTIVATION_KINDS[code], eps), lam)


def encode_weights(w: ModelWeights) -> bytes:
    return encode_frame(MSG_WEIGHTS, encode_weights_payload(w))


def decode_weights(buf: bytes) -> ModelWeights:
    msg_type, payload = decode_frame(buf)
    if msg_type != MSG_WEIGHTS:
        raise ProtocolError(f"expected a weights frame, got type 0x{msg_type:02x}", 4)
    return decode_weights_payload(payload)


# -- transport --------------------------------------------------------------


def parse_address(address: str) -> tuple[str, int]:
    host, sep, port = address.rpartition(":")
    if not sep or not port.isdigit():
        raise ArgumentError(f"address must look like host:port, got {address!r}")
    return host or "0.0.0.0", int(port)


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    while n:
        chunk = sock.recv(min(n, 1 << 20))
        if not chunk:
            raise TransportError("connection closed mid-frame")
        chunks.append(chunk)
        n -= len(chunk)
    return b"".join(chunks)


def read_frame(sock: socket.socket) -> tuple[int, bytes]:
    """Read one frame; the header is validated before any payload is read."""
    msg_type, length = parse_header(_recv_exact(sock, HEADER_SIZE))
    return msg_type, _recv_exact(sock, length)


@dataclass
class ConnectionLog:
    peer: str
    bytes_received: int = 0
    bytes_sent: int = 0
    accepted: bool = False
    error: str | None = None


class Coordinator:
    """Single-round aggregation server.

    Updates are incorporated as they arrive, in any order. Each accepted
    update is acknowledged; once ``expected_clients`` updates are in, the
    weights are solved and one encoding is sent to every waiting client.
    Malformed or incompatible updates get an error frame and are not counted.
    """

    def __init__(self, listen_address: str | tuple[str, int], expected_clients: int,
                 lam: float = 1e-3, act: ActivationSpec = LOGISTIC):
        if expected_clients < 1:
            raise ArgumentError(f"expected_clients must be >= 1, got {expected_clients}")
        if isinstance(listen_address, str):
            listen_address = parse_address(listen_address)
        self.expected_clients = expected_clients
        self.lam = lam
        self.act = act
        self.connections: list[ConnectionLog] = []
        self.weights: ModelWeights | None = None
        self._bind = listen_address
        self._sock: socket.socket | None = None
        self._state = AggregateState()
        self._lock = threading.Lock()
        self._done = threading.Event()
        self._weights_frame: bytes | None = None
        self._handlers: list[threading.Thread] = []
        self._acceptor: threading.Thread | None = None
        self._failure: BaseException | None = None

    @property
    def address(self) -> tuple[str, int]:
        if self._sock is None:
            raise RuntimeError("coordinator not started")
        return self._sock.getsockname()[:2]

    def start(self) -> "Coordinator":
        self._sock = socket.create_server(self._bind)
        self._sock.settimeout(0.1)
        self._acceptor = threading.Thread(target=self._accept_loop, daemon=True)
        self._acceptor.start()
        log.info("coordinator listening on %s:%d for %d clients", *self.address, self.expected_clients)
        return self

    def wait(self, timeout: float | None = None) -> ModelWeights:
        if not self._done.wait(timeout):
            raise TimeoutError("quorum not reached")
        self._acceptor.join()
        for t in list(self._handlers):
            t.join()
        self._sock.close()
        if self._failure is not None:
            raise self._failure
        return self.weights

    def _accept_loop(self) -> None:
        while not self._done.is_set():
            try:
                conn, peer = self._sock.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            entry = ConnectionLog(f"{peer[0]}:{peer[1]}")
            self.connections.append(entry)
            t = threading.Thread(target=self._handle, args=(conn, entry), daemon=True)
            self._handlers.append(t)
            t.start()

    def _send(self, conn: socket.socket, entry: ConnectionLog, frame: bytes) -> None:
        conn.sendall(frame)
        entry.bytes_sent += len(frame)

    def _reject(self, conn, entry, message: str) -> None:
        entry.error = message
        log.warning("rejecting update from %s: %s", entry.peer, message)
        try:
            self._send(conn, entry, encode_frame(MSG_ERROR, message.encode()))
        except OSError:
            pass

    def _handle(self, conn: socket.socket, entry: ConnectionLog) -> None:
        with conn:
            try:
                header = _recv_exact(conn, HEADER_SIZE)
                entry.bytes_received += len(header)
                msg_type, length = parse_header(header)
                if msg_type != MSG_UPDATE:
                    raise ProtocolError(f"expected an update frame, got type 0x{msg_type:02x}", 4)
                payload = _recv_exact(conn, length)
                entry.bytes_received += len(payload)
                update = decode_update_payload(payload)
            except (ProtocolError, ShapeError, ArgumentError) as exc:
                self._reject(conn, entry, str(exc))
                return
            except (TransportError, OSError) as exc:
                entry.error = str(exc)
                return

            with self._lock:
                if self._done.is_set():
                    self._reject(conn, entry, "round already complete")
                    return
                try:
                    self._state = incorporate(self._state, update)
                except ShapeError as exc:
                    self._reject(conn, entry, str(exc))
                    return
                entry.accepted = True
                count = self._state.clients_incorporated
                log.info("incorporated update %d/%d from %s", count, self.expected_clients, entry.peer)
                try:
                    self._send(conn, entry, encode_frame(MSG_ACK))
                except OSError:
                    pass
                if count == self.expected_clients:
                    try:
                        self.weights = solve_weights(self._state, self.lam, self.act)
                        self._weights_frame = encode_weights(self.weights)
                    except Exception as exc:  # surfaced from wait()
                        self._failure = exc
                    self._done.set()

            self._done.wait()
            frame = self._weights_frame or encode_frame(MSG_ERROR, b"coordinator failed to solve")
            try:
                self._send(conn, entry, frame)
            except OSError as exc:
                entry.error = str(exc)


def serve_coordinator(listen_address: str, expected_clients: int, lam: float = 1e-3,
                      act: ActivationSpec = LOGISTIC) -> ModelWeights:
    """Run one aggregation round to completion and return the global weights."""
    return Coordinator(listen_address, expected_clients, lam, act).start().wait()


@dataclass
class AgentStats:
    bytes_sent: int = 0
    bytes_received: int = 0
    payload_bytes: int = 0
    weights_frame: bytes = field(default=b"", repr=False)


def send_update(connect_address: str | tuple[str, int], update: ClientUpdate,
                stats: AgentStats | None = None, timeout: float | None = None) -> ModelWeights:
    """Deliver one update and block until the global weights come back."""
    if isinstance(connect_address, str):
        connect_address = parse_address(connect_address)
    stats = stats if stats is not None else AgentStats()
    frame = encode_update(update)
    stats.payload_bytes = len(frame) - HEADER_SIZE
    try:
        with socket.create_connection(connect_address, timeout=timeout) as sock:
            sock.settimeout(timeout)
            sock.sendall(frame)
            stats.bytes_sent += len(frame)
            while True:
                msg_type, payload = read_frame(sock)
                stats.bytes_received += HEADER_SIZE + len(payload)
                if msg_type == MSG_ERROR:
                    raise RemoteError(payload.decode("utf-8", errors="replace"))
                if msg_type == MSG_ACK:
                    continue
                if msg_type == MSG_WEIGHTS:
                    stats.weights_frame = encode_frame(MSG_WEIGHTS, payload)
                    return decode_weights_payload(payload)
                raise ProtocolError(f"unexpected message type 0x{msg_type:02x}", 4)
    except OSError as exc:
        raise TransportError(f"connection to {connect_address[0]}:{connect_address[1]} failed: {exc}") from exc


def run_client_agent(connect_address: str | tuple[str, int], shard: Dataset,
                     act: ActivationSpec = LOGISTIC, class_list=None,
                     low: float = 0.05, high: float = 0.95,
                     stats: AgentStats | None = None, timeout: float | None = None) -> ModelWeights:
    """Fit the local shard, send the update and return the global weights.

    ``class_list`` must be the task-wide class list when the shard may miss
    some classes; it defaults to the shard's own.
    """
    if shard.num_samples == 0:
        raise ArgumentError("client shard has no samples")
    if shard.labels is None:
        raise ArgumentError("client shard is unlabeled")
    classes = shard.class_list if class_list is None else tuple(class_list)
    update = fit_client(add_bias(shard.features), encode_targets(shard.labels, classes, low, high), act)
    return send_update(connect_address, update, stats, timeout)
