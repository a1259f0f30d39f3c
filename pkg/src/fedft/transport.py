"""Framed message protocol with interchangeable loopback and TCP carriers.

Frames are a 4-byte big-endian payload length, one type byte, then the
payload; integers inside payloads are little-endian and blobs carry a u64
length prefix. Both carriers present the same ordered, reliable,
message-boundary-preserving channel contract.
"""

from __future__ import annotations

import queue
import socket
import struct
import threading
from dataclasses import dataclass
from typing import Callable, Union

from .errors import ProtocolError, TransportError

MAX_FRAME_BYTES = 256 * 1024 * 1024  # sanity cap; real blobs are < 1 MiB

_TYPE_HELLO = 1
_TYPE_GLOBAL_PARAMS = 2
_TYPE_CLIENT_UPDATE = 3
_TYPE_EVAL_REQUEST = 4
_TYPE_SHUTDOWN = 5


@dataclass(frozen=True)
class Hello:
    client_id: int


@dataclass(frozen=True)
class GlobalParams:
    round: int
    blob: bytes


@dataclass(frozen=True)
class ClientUpdateMsg:
    round: int
    num_samples: int
    blob: bytes
    local_loss: float
    local_time_ms: int


@dataclass(frozen=True)
class EvalRequest:
    round: int


@dataclass(frozen=True)
class Shutdown:
    pass


Message = Union[Hello, GlobalParams, ClientUpdateMsg, EvalRequest, Shutdown]


def _pack_blob(blob: bytes) -> bytes:
    return struct.pack("<Q", len(blob)) + blob


def encode_message(msg: Message) -> bytes:
    """Frame one message: u32 BE payload length, type byte, payload."""
    if isinstance(msg, Hello):
        mtype, payload = _TYPE_HELLO, struct.pack("<I", msg.client_id)
    elif isinstance(msg, GlobalParams):
        mtype, payload = _TYPE_GLOBAL_PARAMS, struct.pack("<I", msg.round) + _pack_blob(msg.blob)
    elif isinstance(msg, ClientUpdateMsg):
        mtype = _TYPE_CLIENT_UPDATE
        payload = (
            struct.pack("<IQ", msg.round, msg.num_samples)
            + _pack_blob(msg.blob)
            + struct.pack("<fQ", msg.local_loss, msg.local_time_ms)
        )
    elif isinstance(msg, EvalRequest):
        mtype, payload = _TYPE_EVAL_REQUEST, struct.pack("<I", msg.round)
    elif isinstance(msg, Shutdown):
        mtype, payload = _TYPE_SHUTDOWN, b""
    else:
        raise ProtocolError(f"cannot encode object of type {type(msg).__name__}")
    return struct.pack(">I", len(payload)) + bytes([mtype]) + payload


class _PayloadReader:
    """Strict cursor over one payload; raises on over/under-consumption."""

    def __init__(self, payload: memoryview):
        self.payload = payload
        self.pos = 0

    def take(self, fmt: str) -> tuple:
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.payload):
            raise ProtocolError("payload truncated")
        vals = struct.unpack_from(fmt, self.payload, self.pos)
        self.pos += size
        return vals

    def take_blob(self) -> bytes:
        (n,) = self.take("<Q")
        if self.pos + n > len(self.payload):
            raise ProtocolError("payload blob truncated")
        blob = bytes(self.payload[self.pos:self.pos + n])
        self.pos += n
        return blob

    def finish(self) -> None:
        if self.pos != len(self.payload):
            raise ProtocolError(f"{len(self.payload) - self.pos} unexpected trailing payload bytes")


def decode_message(buf: bytes | bytearray | memoryview) -> tuple[Message, int] | None:
    """Decode one frame from the head of ``buf``.

    Returns (message, consumed_bytes); returns None when more bytes are
    needed. Unknown type bytes and oversized frames raise ProtocolError.
    """
    view = memoryview(buf)
    if len(view) < 5:
        return None
    (length,) = struct.unpack_from(">I", view, 0)
    if length > MAX_FRAME_BYTES:
        raise ProtocolError(f"frame of {length} bytes exceeds the {MAX_FRAME_BYTES}-byte cap")
    if len(view) < 5 + length:
        return None
    mtype = view[4]
    reader = _PayloadReader(view[5:5 + length])
    msg: Message
    if mtype == _TYPE_HELLO:
        (client_id,) = reader.take("<I")
        msg = Hello(client_id=client_id)
    elif mtype == _TYPE_GLOBAL_PARAMS:
        (rnd,) = reader.take("<I")
        msg = GlobalParams(round=rnd, blob=reader.take_blob())
    elif mtype == _TYPE_CLIENT_UPDATE:
        rnd, num_samples = reader.take("<IQ")
        blob = reader.take_blob()
        loss, time_ms = reader.take("<fQ")
        msg = ClientUpdateMsg(round=rnd, num_samples=num_samples, blob=blob,
                              local_loss=loss, local_time_ms=time_ms)
    elif mtype == _TYPE_EVAL_REQUEST:
        (rnd,) = reader.take("<I")
        msg = EvalRequest(round=rnd)
    elif mtype == _TYPE_SHUTDOWN:
        msg = Shutdown()
    else:
        raise ProtocolError(f"unknown message type byte {mtype}")
    reader.finish()
    return msg, 5 + length


# ---------------------------------------------------------------------------
# Carriers.


class LoopbackChannel:
    """In-process carrier; encoded frames travel through a pair of queues."""

    def __init__(self, inbox: "queue.Queue[bytes | None]", outbox: "queue.Queue[bytes | None]"):
        self._inbox = inbox
        self._outbox = outbox
        self._closed = False

    def send(self, msg: Message) -> None:
        if self._closed:
            raise TransportError("send on closed channel")
        self._outbox.put(encode_message(msg))

    def recv(self, timeout: float | None = None) -> Message:
        try:
            frame = self._inbox.get(timeout=timeout)
        except queue.Empty:
            raise TransportError("recv timed out") from None
        if frame is None:
            raise TransportError("channel closed by peer")
        decoded = decode_message(frame)
        if decoded is None or decoded[1] != len(frame):
            raise ProtocolError("loopback frame corrupt")
        return decoded[0]

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            self._outbox.put(None)


def make_loopback_pair() -> tuple[LoopbackChannel, LoopbackChannel]:
    """Two connected endpoints; what one sends, the other receives."""
    a_to_b: "queue.Queue[bytes | None]" = queue.Queue()
    b_to_a: "queue.Queue[bytes | None]" = queue.Queue()
    return LoopbackChannel(b_to_a, a_to_b), LoopbackChannel(a_to_b, b_to_a)


class TcpChannel:
    """Socket carrier with stream reassembly into whole frames."""

    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._buf = bytearray()
        self._closed = False

    def send(self, msg: Message) -> None:
        if self._closed:
            raise TransportError("send on closed channel")
        try:
            self._sock.sendall(encode_message(msg))
        except OSError as exc:
            raise TransportError(f"send failed: {exc}") from exc

    def recv(self, timeout: float | None = None) -> Message:
        self._sock.settimeout(timeout)
        while True:
            decoded = decode_message(self._buf)
            if decoded is not None:
                msg, consumed = decoded
                del self._buf[:consumed]
                return msg
            try:
                chunk = self._sock.recv(65536)
            except socket.timeout:
                raise TransportError("recv timed out") from None
            except OSError as exc:
                raise TransportError(f"recv failed: {exc}") from exc
            if not chunk:
                raise TransportError("connection closed mid-stream")
            self._buf += chunk

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            try:
                self._sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            self._sock.close()


def parse_endpoint(endpoint: str) -> tuple[str, int]:
    """Split 'host:port'; raises on malformed values."""
    host, sep, port = endpoint.rpartition(":")
    if not sep or not host:
        raise TransportError(f"endpoint {endpoint!r} is not host:port")
    try:
        return host, int(port)
    except ValueError:
        raise TransportError(f"endpoint {endpoint!r} has a non-numeric port") from None


class Listener:
    """Bound, listening server socket that accepts TcpChannels."""

    def __init__(self, endpoint: str, backlog: int = 16):
        host, port = parse_endpoint(endpoint)
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            self._sock.bind((host, port))
        except OSError as exc:
            self._sock.close()
            raise TransportError(f"cannot bind {endpoint}: {exc}") from exc
        self._sock.listen(backlog)

    @property
    def endpoint(self) -> str:
        host, port = self._sock.getsockname()[:2]
        return f"{host}:{port}"

    def accept(self, timeout: float | None = None) -> TcpChannel:
        self._sock.settimeout(timeout)
        try:
            conn, _ = self._sock.accept()
        except socket.timeout:
            raise TransportError("no client connected before the accept timeout") from None
        except OSError as exc:
            raise TransportError(f"accept failed: {exc}") from exc
        conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        return TcpChannel(conn)

    def close(self) -> None:
        self._sock.close()


def connect(endpoint: str, timeout: float = 10.0, retries: int = 0, retry_delay: float = 0.2) -> TcpChannel:
    """Open a TcpChannel to a listening server; refused/reset surfaces as TransportError."""
    host, port = parse_endpoint(endpoint)
    attempt = 0
    while True:
        try:
            sock = socket.create_connection((host, port), timeout=timeout)
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            sock.settimeout(None)
            return TcpChannel(sock)
        except OSError as exc:
            attempt += 1
            if attempt > retries:
                raise TransportError(f"cannot connect to {endpoint}: {exc}") from exc
            threading.Event().wait(retry_delay)


def serve(endpoint: str, handler: Callable[[TcpChannel], None], n_conns: int,
          accept_timeout: float | None = None) -> Listener:
    """Accept ``n_conns`` connections, each handled on its own thread.

    Returns the listener immediately; callers join by other means (the
    handler owns the channel). Used by tests; the federation server drives
    accept() directly for its barrier semantics.
    """
    listener = Listener(endpoint)

    def _run() -> None:
        for _ in range(n_conns):
            channel = listener.accept(accept_timeout)
            threading.Thread(target=handler, args=(channel,), daemon=True).start()

    threading.Thread(target=_run, daemon=True).start()
    return listener
