"""Length-prefixed JSON message layer over TCP.

Frames are a 4-byte big-endian length followed by one UTF-8 JSON object with
the keys "kind", "sender" and "payload". Servers accept any number of peers
and can broadcast; clients reconnect automatically and flush queued outbound
messages after a reconnect (at-least-once delivery).
"""

from __future__ import annotations

import json
import logging
import queue
import socket
import struct
import threading
from collections import deque
from dataclasses import dataclass
from typing import Callable, Optional

from .core import PAYLOAD_KEYS, Message, MessageKind

log = logging.getLogger(__name__)

MAX_FRAME_BYTES = 1 << 20
_LEN = struct.Struct("!I")


class ProtocolError(Exception):
    """Malformed frame or message; the offending connection must be dropped."""


@dataclass(frozen=True)
class PeerId:
    host: str
    port: int

    def __str__(self) -> str:
        return "%s:%d" % (self.host, self.port)

    @classmethod
    def parse(cls, text: str) -> "PeerId":
        host, sep, port = text.rpartition(":")
        if not sep or not port.isdigit():
            raise ValueError("expected host:port, got %r" % text)
        return cls(host, int(port))


def encode_message(msg: Message) -> bytes:
    """Serialize one message into a complete frame (deterministic byte form)."""
    if not isinstance(msg.kind, MessageKind):
        raise ProtocolError("unknown message kind: %r" % (msg.kind,))
    bad = set(msg.payload) - PAYLOAD_KEYS
    if bad:
        raise ProtocolError("unknown payload keys: %s" % sorted(bad))
    if not msg.required_keys_present():
        raise ProtocolError("missing task echo in %s payload" % msg.kind.value)
    body = json.dumps(
        {"kind": msg.kind.value, "sender": msg.sender_id, "payload": msg.payload},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    if len(body) > MAX_FRAME_BYTES:
        raise ProtocolError("frame exceeds %d bytes" % MAX_FRAME_BYTES)
    return _LEN.pack(len(body)) + body


def _decode_body(body: bytes) -> Message:
    try:
        obj = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError("undecodable frame body: %s" % exc) from exc
    if not isinstance(obj, dict):
        raise ProtocolError("frame body is not an object")
    try:
        kind = MessageKind(obj["kind"])
    except (KeyError, ValueError):
        raise ProtocolError("unknown message kind: %r" % obj.get("kind"))
    payload = obj.get("payload", {})
    if not isinstance(payload, dict) or set(payload) - PAYLOAD_KEYS:
        raise ProtocolError("bad payload in %s message" % kind.value)
    return Message(kind=kind, payload=payload, sender_id=obj.get("sender", ""))


def decode_message(frame: bytes) -> Message:
    """Decode exactly one complete frame."""
    msgs, rest = decode_stream(frame)
    if len(msgs) != 1 or rest:
        raise ProtocolError("expected exactly one frame")
    return msgs[0]


def decode_stream(buffer: bytes, max_frame: int = MAX_FRAME_BYTES) -> tuple[list[Message], bytes]:
    """Extract all complete messages from a byte buffer.

    Returns the decoded messages and the unconsumed tail. Split-invariant:
    feeding a frame sequence in any chunking yields the same messages.
    """
    out: list[Message] = []
    pos = 0
    while len(buffer) - pos >= _LEN.size:
        (length,) = _LEN.unpack_from(buffer, pos)
        if length > max_frame:
            raise ProtocolError("frame length %d exceeds cap %d" % (length, max_frame))
        if len(buffer) - pos - _LEN.size < length:
            break
        body = buffer[pos + _LEN.size : pos + _LEN.size + length]
        out.append(_decode_body(body))
        pos += _LEN.size + length
    return out, buffer[pos:]


class _ServerConnection:
    def __init__(self, server: "MessageServer", sock: socket.socket, addr):
        self.server = server
        self.sock = sock
        self.addr = addr
        self.send_lock = threading.Lock()
        self.sender_id: Optional[str] = None
        self.alive = True

    def send(self, msg: Message) -> bool:
        data = encode_message(msg)
        try:
            with self.send_lock:
                self.sock.sendall(data)
            return True
        except OSError:
            self.close()
            return False

    def close(self) -> None:
        self.alive = False
        try:
            # wake the reader thread; a bare close() leaves recv() blocked
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        try:
            self.sock.close()
        except OSError:
            pass

    def reader_loop(self) -> None:
        buf = b""
        try:
            while True:
                chunk = self.sock.recv(65536)
                if not chunk:
                    break
                buf += chunk
                msgs, buf = decode_stream(buf)
                for msg in msgs:
                    if self.sender_id is None and msg.sender_id:
                        self.sender_id = msg.sender_id
                    self.server._deliver(self, msg)
        except ProtocolError as exc:
            log.warning("dropping peer %s: %s", self.addr, exc)
        except OSError:
            pass
        finally:
            self.close()
            self.server._forget(self)


class MessageServer:
    """Accepts controller connections and delivers their decoded messages.

    on_message(sender_id, message, reply) is invoked for every inbound
    message; reply(msg) answers just that peer. Delivery is serial within a
    peer, concurrent across peers.
    """

    def __init__(self, port: int, on_message: Callable[[str, Message, Callable[[Message], None]], None],
                 host: str = "0.0.0.0"):
        self.on_message = on_message
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((host, port))
        self._sock.listen()
        self.port = self._sock.getsockname()[1]
        self._conns: set[_ServerConnection] = set()
        self._lock = threading.Lock()
        self._closed = False
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._accept_thread.start()

    def _accept_loop(self) -> None:
        while not self._closed:
            try:
                sock, addr = self._sock.accept()
            except OSError:
                return
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            conn = _ServerConnection(self, sock, addr)
            with self._lock:
                self._conns.add(conn)
            threading.Thread(target=conn.reader_loop, daemon=True).start()

    def _deliver(self, conn: _ServerConnection, msg: Message) -> None:
        self.on_message(msg.sender_id, msg, conn.send)

    def _forget(self, conn: _ServerConnection) -> None:
        with self._lock:
            self._conns.discard(conn)

    def broadcast(self, msg: Message) -> None:
        with self._lock:
            conns = list(self._conns)
        for conn in conns:
            conn.send(msg)

    def send_to(self, sender_id: str, msg: Message) -> bool:
        """Send to the connection that most recently identified as sender_id."""
        with self._lock:
            conns = [c for c in self._conns if c.sender_id == sender_id]
        return any(conn.send(msg) for conn in conns)

    @property
    def connection_count(self) -> int:
        with self._lock:
            return len(self._conns)

    def close(self) -> None:
        self._closed = True
        try:
            # shutdown() wakes a thread blocked in accept(); close() alone
            # leaves it (and the kernel listen socket) alive on Linux.
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        try:
            self._sock.close()
        except OSError:
            pass
        self._accept_thread.join(timeout=5)
        with self._lock:
            conns = list(self._conns)
        for conn in conns:
            conn.close()


class MessageClient:
    """Connects to one engine and keeps the connection alive.

    send() queues a message for delivery; queued messages survive connection
    loss and are flushed in order after a reconnect. on_state(connected) fires
    on every connection state change, on_message(msg) on every inbound message.
    """

    def __init__(
        self,
        peer: PeerId,
        sender_id: str,
        retry_interval: float = 10.0,
        on_message: Optional[Callable[[Message], None]] = None,
        on_state: Optional[Callable[[bool], None]] = None,
    ):
        self.peer = peer
        self.sender_id = sender_id
        self.retry_interval = retry_interval
        self.on_message = on_message
        self.on_state = on_state
        self.inbound: "queue.Queue[Message]" = queue.Queue()
        self._outbound: deque[Message] = deque()
        self._outbound_cond = threading.Condition()
        self._generation = 0
        self._connected = threading.Event()
        self._closed = threading.Event()
        self._sock: Optional[socket.socket] = None
        self._sock_lock = threading.Lock()
        self._ever_connected = False
        self._net_thread = threading.Thread(target=self._network_loop, daemon=True)
        self._send_thread = threading.Thread(target=self._send_loop, daemon=True)
        self._net_thread.start()
        self._send_thread.start()

    @property
    def connected(self) -> bool:
        return self._connected.is_set()

    def wait_connected(self, timeout: Optional[float] = None) -> bool:
        return self._connected.wait(timeout)

    def send(self, msg: Message) -> None:
        if self._closed.is_set():
            raise ConnectionError("client is closed")
        if msg.sender_id != self.sender_id:
            msg = Message(kind=msg.kind, payload=msg.payload, sender_id=self.sender_id)
        with self._outbound_cond:
            self._outbound.append(msg)
            self._outbound_cond.notify()

    def purge_pending(self) -> int:
        """Discard all queued-but-unsent messages; returns how many were dropped."""
        with self._outbound_cond:
            dropped = len(self._outbound)
            self._outbound.clear()
            self._generation += 1
            return dropped

    def receive(self, timeout: Optional[float] = None) -> Optional[Message]:
        try:
            return self.inbound.get(timeout=timeout)
        except queue.Empty:
            return None

    def _set_state(self, up: bool) -> None:
        was_up = self._connected.is_set()
        if up:
            self._connected.set()
        else:
            self._connected.clear()
        if up != was_up and self.on_state is not None and not self._closed.is_set():
            self.on_state(up)

    def _network_loop(self) -> None:
        while not self._closed.is_set():
            try:
                sock = socket.create_connection((self.peer.host, self.peer.port), timeout=10)
            except OSError:
                if self._closed.wait(self.retry_interval):
                    return
                continue
            sock.settimeout(None)
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            with self._sock_lock:
                self._sock = sock
            self._ever_connected = True
            self._set_state(True)
            buf = b""
            try:
                while True:
                    chunk = sock.recv(65536)
                    if not chunk:
                        break
                    buf += chunk
                    msgs, buf = decode_stream(buf)
                    for msg in msgs:
                        self.inbound.put(msg)
                        if self.on_message is not None:
                            self.on_message(msg)
            except (OSError, ProtocolError):
                pass
            finally:
                self._set_state(False)
                with self._sock_lock:
                    self._sock = None
                try:
                    sock.close()
                except OSError:
                    pass
            if self._closed.wait(self.retry_interval):
                return

    def _send_loop(self) -> None:
        while not self._closed.is_set():
            with self._outbound_cond:
                while not self._outbound and not self._closed.is_set():
                    self._outbound_cond.wait(timeout=0.2)
                if self._closed.is_set():
                    return
                msg = self._outbound.popleft()
                gen = self._generation
            while not self._closed.is_set():
                if not self._connected.wait(timeout=0.2):
                    continue
                with self._sock_lock:
                    sock = self._sock
                if sock is None:
                    continue
                try:
                    sock.sendall(encode_message(msg))
                    break
                except OSError:
                    # Retried after reconnect (at-least-once), unless the
                    # queue was purged in the meantime.
                    self._connected.clear()
                    with self._outbound_cond:
                        if gen != self._generation:
                            break
                    continue

    def close(self) -> None:
        self._closed.set()
        with self._outbound_cond:
            self._outbound_cond.notify_all()
        self._connected.clear()
        with self._sock_lock:
            if self._sock is not None:
                try:
                    self._sock.shutdown(socket.SHUT_RDWR)
                except OSError:
                    pass
                try:
                    self._sock.close()
                except OSError:
                    pass
