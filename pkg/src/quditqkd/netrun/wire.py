"""Framed wire format for the networked protocol roles.

Every message is one frame: a 4-byte big-endian payload length, one
type byte, then the payload.  Payload layouts:

    QUDIT            serialized sparse ket (u16 index + sign byte/term)
    PAIR_ANNOUNCE    two u16 basis indices, canonical i < j
    OUTCOME_ANNOUNCE u16 u | u16 v | u8 category (0 in-pair, 1 outside)
    SIFT_ACCEPT      strictly increasing u32 round indices
    SAMPLE_REVEAL    (u32 round | u8 bit) entries, rounds increasing
    PARITY_ROUND     u64 pairing seed | pair-parity bitmap
    BLOCK_PARITY     u32 block size r | block-parity bitmap
    VERDICT          UTF-8 JSON of the shared session facts
    CONFIG           UTF-8 JSON parameter handshake
    ABORT            UTF-8 reason string

The outcome announcement carries only the in-pair/outside category --
announcing the sign outcome itself would reveal raw key bits.  Bitmaps
are LSB-first with zero padding in the final byte (validated on
decode).  Decoders raise :class:`ProtocolViolation` on any malformed
payload; roles translate that into a clean ABORT, never a crash.
"""

from __future__ import annotations

import enum
import hashlib
import json
import socket
import struct

import numpy as np

_HEADER = struct.Struct(">IB")
MAX_PAYLOAD = 1 << 26

ABORT_CONDITION = "condition-2-failed"
ABORT_PROTOCOL = "protocol-error"
ABORT_CONFIG = "config-mismatch"


class ProtocolViolation(Exception):
    """Malformed, out-of-order, or inconsistent frame."""


class PeerDisconnect(ConnectionError):
    """The byte stream ended mid-session."""


class AbortReceived(Exception):
    """The peer sent an ABORT frame."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class FrameType(enum.IntEnum):
    QUDIT = 0x01
    PAIR_ANNOUNCE = 0x02
    OUTCOME_ANNOUNCE = 0x03
    SIFT_ACCEPT = 0x04
    SAMPLE_REVEAL = 0x05
    PARITY_ROUND = 0x06
    BLOCK_PARITY = 0x07
    VERDICT = 0x08
    CONFIG = 0x09
    ABORT = 0x0F


def encode_frame(ftype: FrameType, payload: bytes) -> bytes:
    if len(payload) > MAX_PAYLOAD:
        raise ValueError("payload too large")
    return _HEADER.pack(len(payload), int(ftype)) + payload


def pack_bitmap(bits) -> bytes:
    bits = np.asarray(bits, np.uint8)
    if bits.size == 0:
        return b""
    return np.packbits(bits, bitorder="little").tobytes()


def unpack_bitmap(data: bytes, count: int) -> np.ndarray:
    expected = (count + 7) // 8
    if len(data) != expected:
        raise ProtocolViolation(f"bitmap length {len(data)} != {expected} for {count} bits")
    if count == 0:
        return np.zeros(0, np.uint8)
    bits = np.unpackbits(np.frombuffer(data, np.uint8), bitorder="little")
    if bits[count:].any():
        raise ProtocolViolation("nonzero padding bits in bitmap")
    return bits[:count]


def encode_pair(i: int, j: int) -> bytes:
    return struct.pack(">HH", i, j)


def decode_pair(payload: bytes, order: int) -> tuple[int, int]:
    if len(payload) != 4:
        raise ProtocolViolation("pair announcement must be 4 bytes")
    i, j = struct.unpack(">HH", payload)
    if not i < j < order:
        raise ProtocolViolation(f"invalid pair ({i}, {j}) for order {order}")
    return i, j


def encode_outcome_announce(u: int, v: int, category: int) -> bytes:
    return struct.pack(">HHB", u, v, category)


def decode_outcome_announce(payload: bytes, order: int) -> tuple[int, int, int]:
    if len(payload) != 5:
        raise ProtocolViolation("outcome announcement must be 5 bytes")
    u, v, category = struct.unpack(">HHB", payload)
    if not u < v < order:
        raise ProtocolViolation(f"invalid pair ({u}, {v}) for order {order}")
    if category not in (0, 1):
        raise ProtocolViolation(f"invalid outcome category {category}")
    return u, v, category


def encode_index_list(indices) -> bytes:
    return np.asarray(indices, ">u4").tobytes()


def decode_index_list(payload: bytes) -> np.ndarray:
    if len(payload) % 4:
        raise ProtocolViolation("index list length not a multiple of 4")
    arr = np.frombuffer(payload, ">u4").astype(np.int64)
    if arr.size and np.any(np.diff(arr) <= 0):
        raise ProtocolViolation("round indices must be strictly increasing")
    return arr


_REVEAL_DTYPE = np.dtype([("round", ">u4"), ("bit", "u1")])


def encode_sample_reveal(rounds, bits) -> bytes:
    rec = np.empty(len(rounds), _REVEAL_DTYPE)
    rec["round"] = rounds
    rec["bit"] = bits
    return rec.tobytes()


def decode_sample_reveal(payload: bytes) -> tuple[np.ndarray, np.ndarray]:
    if len(payload) % _REVEAL_DTYPE.itemsize:
        raise ProtocolViolation("sample reveal length not a multiple of 5")
    rec = np.frombuffer(payload, _REVEAL_DTYPE)
    rounds = rec["round"].astype(np.int64)
    bits = rec["bit"].astype(np.uint8)
    if rounds.size and np.any(np.diff(rounds) <= 0):
        raise ProtocolViolation("sample rounds must be strictly increasing")
    if bits.size and bits.max() > 1:
        raise ProtocolViolation("sample bits must be 0 or 1")
    return rounds, bits


def encode_parity_round(seed: int, bits) -> bytes:
    return struct.pack(">Q", seed) + pack_bitmap(bits)


def decode_parity_round(payload: bytes, count: int) -> tuple[int, np.ndarray]:
    if len(payload) < 8:
        raise ProtocolViolation("parity round shorter than its seed")
    (seed,) = struct.unpack(">Q", payload[:8])
    return seed, unpack_bitmap(payload[8:], count)


def encode_block_parity(r: int, bits) -> bytes:
    return struct.pack(">I", r) + pack_bitmap(bits)


def decode_block_parity(payload: bytes, count: int) -> tuple[int, np.ndarray]:
    if len(payload) < 4:
        raise ProtocolViolation("block parity shorter than its size field")
    (r,) = struct.unpack(">I", payload[:4])
    return r, unpack_bitmap(payload[4:], count)


def encode_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True).encode("utf-8")


def decode_json(payload: bytes) -> dict:
    try:
        obj = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolViolation(f"invalid JSON payload: {exc}") from exc
    if not isinstance(obj, dict):
        raise ProtocolViolation("JSON payload must be an object")
    return obj


def encode_abort(reason: str) -> bytes:
    return reason.encode("utf-8")


def decode_abort(payload: bytes) -> str:
    return payload.decode("utf-8", errors="replace")


class Link:
    """A framed, transcript-hashed connection to one peer."""

    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._tx = hashlib.sha256()
        self._rx = hashlib.sha256()
        self.tx_frames = 0
        self.rx_frames = 0

    def send(self, ftype: FrameType, payload: bytes = b"") -> None:
        frame = encode_frame(ftype, payload)
        self._tx.update(frame)
        self.tx_frames += 1
        self._sock.sendall(frame)

    def send_abort(self, reason: str) -> None:
        try:
            self.send(FrameType.ABORT, encode_abort(reason))
        except OSError:
            pass

    def _read_exact(self, n: int) -> bytes:
        chunks = []
        got = 0
        while got < n:
            chunk = self._sock.recv(min(n - got, 1 << 16))
            if not chunk:
                raise PeerDisconnect("stream ended mid-frame")
            chunks.append(chunk)
            got += len(chunk)
        return b"".join(chunks)

    def recv(self) -> tuple[FrameType, bytes]:
        header = self._read_exact(_HEADER.size)
        length, raw_type = _HEADER.unpack(header)
        if length > MAX_PAYLOAD:
            raise ProtocolViolation(f"frame length {length} exceeds cap")
        payload = self._read_exact(length)
        self._rx.update(header)
        self._rx.update(payload)
        self.rx_frames += 1
        try:
            ftype = FrameType(raw_type)
        except ValueError:
            raise ProtocolViolation(f"unknown frame type 0x{raw_type:02x}") from None
        return ftype, payload

    def expect(self, ftype: FrameType) -> bytes:
        got, payload = self.recv()
        if got == FrameType.ABORT:
            raise AbortReceived(decode_abort(payload))
        if got != ftype:
            raise ProtocolViolation(f"expected {ftype.name}, got {got.name}")
        return payload

    @property
    def tx_digest(self) -> str:
        return self._tx.hexdigest()

    @property
    def rx_digest(self) -> str:
        return self._rx.hexdigest()

    def transcript_dict(self) -> dict:
        return {
            "tx_sha256": self.tx_digest,
            "rx_sha256": self.rx_digest,
            "tx_frames": self.tx_frames,
            "rx_frames": self.rx_frames,
        }

    def close_write(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_WR)
        except OSError:
            pass

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass
