"""Length-prefixed binary framing for the count-server protocol.

Frame layout, all little-endian:

    uint32  length   (tag byte + body, i.e. everything after this field)
    uint8   tag      (1=FETCH, 2=SNAPSHOT, 3=PUSH, 4=ACK)
    bytes   body

Bodies:

    FETCH     empty
    SNAPSHOT  uint32 K, uint32 V, float64 decay, triples
    PUSH      triples
    ACK       uint8 applied (0 or 1)

where `triples` is uint32 count N followed by N records of
(uint32 topic, uint32 word, float64 count). The encoding is normative:
a frame produced here can be consumed by any implementation of the same
layout, byte for byte.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

MSG_FETCH = 1
MSG_SNAPSHOT = 2
MSG_PUSH = 3
MSG_ACK = 4

# refuse to allocate frames beyond this (malformed or hostile length fields)
MAX_FRAME_BYTES = 1 << 30

_LEN = struct.Struct("<I")
_HEADER = struct.Struct("<IB")
_SNAPSHOT_FIXED = struct.Struct("<IId")
_TRIPLE = struct.Struct("<IId")
_COUNT = struct.Struct("<I")


class ProtocolError(ValueError):
    """A frame violates the wire format."""


@dataclass(frozen=True)
class Fetch:
    pass


@dataclass(frozen=True)
class Snapshot:
    n_topics: int
    vocab_size: int
    decay: float
    entries: tuple[tuple[int, int, float], ...]


@dataclass(frozen=True)
class Push:
    entries: tuple[tuple[int, int, float], ...]


@dataclass(frozen=True)
class Ack:
    applied: bool


Message = Fetch | Snapshot | Push | Ack


def _encode_triples(entries) -> bytes:
    parts = [_COUNT.pack(len(entries))]
    for topic, word, count in entries:
        parts.append(_TRIPLE.pack(topic, word, count))
    return b"".join(parts)


def _decode_triples(body: bytes, offset: int) -> tuple[tuple[tuple[int, int, float], ...], int]:
    if len(body) - offset < 4:
        raise ProtocolError("truncated triple count")
    (n,) = _COUNT.unpack_from(body, offset)
    offset += 4
    need = n * _TRIPLE.size
    if len(body) - offset < need:
        raise ProtocolError(f"triple block declares {n} records but body is short")
    entries = []
    for _ in range(n):
        entries.append(_TRIPLE.unpack_from(body, offset))
        offset += _TRIPLE.size
    return tuple(entries), offset


def encode(msg: Message) -> bytes:
    """Encode a message as one complete frame."""
    if isinstance(msg, Fetch):
        tag, body = MSG_FETCH, b""
    elif isinstance(msg, Snapshot):
        tag = MSG_SNAPSHOT
        body = _SNAPSHOT_FIXED.pack(msg.n_topics, msg.vocab_size, msg.decay) + _encode_triples(
            msg.entries
        )
    elif isinstance(msg, Push):
        tag, body = MSG_PUSH, _encode_triples(msg.entries)
    elif isinstance(msg, Ack):
        tag, body = MSG_ACK, bytes([1 if msg.applied else 0])
    else:
        raise TypeError(f"not a wire message: {msg!r}")
    return _HEADER.pack(1 + len(body), tag) + body


def decode(frame: bytes) -> Message:
    """Decode one complete frame; inverse of encode."""
    if len(frame) < 5:
        raise ProtocolError(f"frame of {len(frame)} bytes is shorter than the minimum 5")
    (length,) = _LEN.unpack_from(frame, 0)
    if length < 1:
        raise ProtocolError("length field must cover at least the tag byte")
    if len(frame) - 4 != length:
        raise ProtocolError(f"length field says {length}, frame carries {len(frame) - 4}")
    tag = frame[4]
    body = frame[5:]
    if tag == MSG_FETCH:
        if body:
            raise ProtocolError("FETCH carries no body")
        return Fetch()
    if tag == MSG_SNAPSHOT:
        if len(body) < _SNAPSHOT_FIXED.size:
            raise ProtocolError("truncated SNAPSHOT header")
        n_topics, vocab_size, decay = _SNAPSHOT_FIXED.unpack_from(body, 0)
        entries, end = _decode_triples(body, _SNAPSHOT_FIXED.size)
        if end != len(body):
            raise ProtocolError("trailing bytes after SNAPSHOT triples")
        return Snapshot(n_topics=n_topics, vocab_size=vocab_size, decay=decay, entries=entries)
    if tag == MSG_PUSH:
        entries, end = _decode_triples(body, 0)
        if end != len(body):
            raise ProtocolError("trailing bytes after PUSH triples")
        return Push(entries=entries)
    if tag == MSG_ACK:
        if len(body) != 1:
            raise ProtocolError("ACK body must be exactly one byte")
        if body[0] not in (0, 1):
            raise ProtocolError(f"ACK flag must be 0 or 1, got {body[0]}")
        return Ack(applied=bool(body[0]))
    raise ProtocolError(f"unknown message tag {tag}")


def _recv_exact(sock, n: int) -> bytes | None:
    """Read exactly n bytes; None on clean EOF at a frame boundary."""
    chunks = []
    got = 0
    while got < n:
        chunk = sock.recv(n - got)
        if not chunk:
            if got == 0:
                return None
            raise ProtocolError(f"connection closed mid-frame ({got}/{n} bytes)")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def recv_message(sock) -> Message | None:
    """Read one framed message from a socket; None on clean EOF."""
    header = _recv_exact(sock, 4)
    if header is None:
        return None
    (length,) = _LEN.unpack(header)
    if length < 1 or length > MAX_FRAME_BYTES:
        raise ProtocolError(f"unreasonable frame length {length}")
    rest = _recv_exact(sock, length)
    if rest is None:
        raise ProtocolError("connection closed after length field")
    return decode(header + rest)


def send_message(sock, msg: Message) -> None:
    sock.sendall(encode(msg))
