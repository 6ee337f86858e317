"""Wire format of the classical channel.

Every message is ``[tag:1][len:4 LE][payload]``.  Integers are unsigned
little-endian; bit strings travel as a *bitmap*: a u32 bit count followed
by the bits packed LSB-first into ``ceil(count / 8)`` bytes.

=====  ==================  =====================================================
tag    message             payload
=====  ==================  =====================================================
0x01   FRAME_ANNOUNCE      frame u32, qubit_count u32
0x02   DETECTION_REPORT    frame u32, count u32, count x (pulse_index u32, basis u8)
0x03   SIFT_MASK           frame u32, bitmap
0x04   SYNDROME            block_id u32, code_id u32, bitmap
0x05   VERIFY              block_id u32, digest 8 bytes
0x06   PA_SEED             n_in u32, n_out u32, bitmap
0x07   KEY_CONFIRM         digest 8 bytes
0x08   SYNDROME_REQUEST    block_id u32
0x09   CLASS_ANNOUNCE      frame u32, sent 3 x u32, count u32, count x class u8
=====  ==================  =====================================================
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, fields

import numpy as np

from .errors import FramingError, ProtocolError

HEADER = struct.Struct("<BI")
MAX_PAYLOAD = 1 << 30

FRAME_ANNOUNCE = 0x01
DETECTION_REPORT = 0x02
SIFT_MASK = 0x03
SYNDROME = 0x04
VERIFY = 0x05
PA_SEED = 0x06
KEY_CONFIRM = 0x07
SYNDROME_REQUEST = 0x08
CLASS_ANNOUNCE = 0x09

_U32 = struct.Struct("<I")
_REPORT_ENTRY = np.dtype([("index", "<u4"), ("basis", "u1")])


class Message:
    """Base of all wire messages; subclasses are frozen dataclasses."""

    tag: int = -1

    def __eq__(self, other):
        if type(other) is not type(self):
            return NotImplemented
        for f in fields(self):
            a, b = getattr(self, f.name), getattr(other, f.name)
            if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
                if not np.array_equal(a, b):
                    return False
            elif a != b:
                return False
        return True

    __hash__ = None

    def payload(self) -> bytes:
        raise NotImplementedError

    @classmethod
    def parse(cls, payload: memoryview) -> "Message":
        raise NotImplementedError


def _bits(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=np.uint8)


def pack_bitmap(bits) -> bytes:
    bits = _bits(bits)
    if bits.size and bits.max() > 1:
        raise ProtocolError("bitmap entries must be 0 or 1")
    return _U32.pack(len(bits)) + np.packbits(bits, bitorder="little").tobytes()


def unpack_bitmap(buf: memoryview, offset: int) -> tuple[np.ndarray, int]:
    """Read a bitmap starting at ``offset``; returns (bits, next offset)."""
    if len(buf) < offset + 4:
        raise FramingError("truncated bitmap header")
    (count,) = _U32.unpack_from(buf, offset)
    offset += 4
    n_bytes = (count + 7) // 8
    if len(buf) < offset + n_bytes:
        raise FramingError(f"bitmap declares {count} bits but the payload is shorter")
    raw = np.frombuffer(buf, dtype=np.uint8, count=n_bytes, offset=offset)
    bits = np.unpackbits(raw, count=count, bitorder="little")
    return bits, offset + n_bytes


def _expect_end(buf: memoryview, offset: int, name: str) -> None:
    if offset != len(buf):
        raise FramingError(f"{name}: {len(buf) - offset} unexpected trailing payload bytes")


def _need(buf: memoryview, n: int, name: str) -> None:
    if len(buf) < n:
        raise FramingError(f"{name}: payload of {len(buf)} bytes, need at least {n}")


def _digest_bytes(digest: int) -> bytes:
    return int(digest).to_bytes(8, "little")


@dataclass(frozen=True, eq=False)
class FrameAnnounce(Message):
    frame_number: int
    qubit_count: int
    tag = FRAME_ANNOUNCE

    def payload(self) -> bytes:
        return struct.pack("<II", self.frame_number, self.qubit_count)

    @classmethod
    def parse(cls, buf):
        _need(buf, 8, "FRAME_ANNOUNCE")
        _expect_end(buf, 8, "FRAME_ANNOUNCE")
        return cls(*struct.unpack_from("<II", buf))


@dataclass(frozen=True, eq=False)
class DetectionReportMessage(Message):
    frame_number: int
    pulse_index: np.ndarray
    bob_basis: np.ndarray
    tag = DETECTION_REPORT

    def payload(self) -> bytes:
        entries = np.empty(len(self.pulse_index), dtype=_REPORT_ENTRY)
        entries["index"] = self.pulse_index
        entries["basis"] = self.bob_basis
        return struct.pack("<II", self.frame_number, len(entries)) + entries.tobytes()

    @classmethod
    def parse(cls, buf):
        _need(buf, 8, "DETECTION_REPORT")
        frame, count = struct.unpack_from("<II", buf)
        end = 8 + count * _REPORT_ENTRY.itemsize
        _need(buf, end, "DETECTION_REPORT")
        _expect_end(buf, end, "DETECTION_REPORT")
        entries = np.frombuffer(buf, dtype=_REPORT_ENTRY, count=count, offset=8)
        return cls(frame, entries["index"].astype(np.int64), entries["basis"].copy())


@dataclass(frozen=True, eq=False)
class SiftMask(Message):
    frame_number: int
    keep: np.ndarray
    tag = SIFT_MASK

    def payload(self) -> bytes:
        return _U32.pack(self.frame_number) + pack_bitmap(self.keep)

    @classmethod
    def parse(cls, buf):
        _need(buf, 4, "SIFT_MASK")
        (frame,) = _U32.unpack_from(buf)
        bits, end = unpack_bitmap(buf, 4)
        _expect_end(buf, end, "SIFT_MASK")
        return cls(frame, bits)


@dataclass(frozen=True, eq=False)
class SyndromeMessage(Message):
    block_id: int
    code_id: int
    bits: np.ndarray
    tag = SYNDROME

    def payload(self) -> bytes:
        return struct.pack("<II", self.block_id, self.code_id) + pack_bitmap(self.bits)

    @classmethod
    def parse(cls, buf):
        _need(buf, 8, "SYNDROME")
        block_id, code_id = struct.unpack_from("<II", buf)
        bits, end = unpack_bitmap(buf, 8)
        _expect_end(buf, end, "SYNDROME")
        return cls(block_id, code_id, bits)


@dataclass(frozen=True, eq=False)
class Verify(Message):
    block_id: int
    digest: int
    tag = VERIFY

    def payload(self) -> bytes:
        return _U32.pack(self.block_id) + _digest_bytes(self.digest)

    @classmethod
    def parse(cls, buf):
        _need(buf, 12, "VERIFY")
        _expect_end(buf, 12, "VERIFY")
        (block_id,) = _U32.unpack_from(buf)
        return cls(block_id, int.from_bytes(buf[4:12], "little"))


@dataclass(frozen=True, eq=False)
class PaSeed(Message):
    n_in: int
    n_out: int
    bits: np.ndarray
    tag = PA_SEED

    def payload(self) -> bytes:
        return struct.pack("<II", self.n_in, self.n_out) + pack_bitmap(self.bits)

    @classmethod
    def parse(cls, buf):
        _need(buf, 8, "PA_SEED")
        n_in, n_out = struct.unpack_from("<II", buf)
        bits, end = unpack_bitmap(buf, 8)
        _expect_end(buf, end, "PA_SEED")
        return cls(n_in, n_out, bits)


@dataclass(frozen=True, eq=False)
class KeyConfirm(Message):
    digest: int
    tag = KEY_CONFIRM

    def payload(self) -> bytes:
        return _digest_bytes(self.digest)

    @classmethod
    def parse(cls, buf):
        _need(buf, 8, "KEY_CONFIRM")
        _expect_end(buf, 8, "KEY_CONFIRM")
        return cls(int.from_bytes(buf[:8], "little"))


@dataclass(frozen=True, eq=False)
class SyndromeRequest(Message):
    block_id: int
    tag = SYNDROME_REQUEST

    def payload(self) -> bytes:
        return _U32.pack(self.block_id)

    @classmethod
    def parse(cls, buf):
        _need(buf, 4, "SYNDROME_REQUEST")
        _expect_end(buf, 4, "SYNDROME_REQUEST")
        return cls(_U32.unpack_from(buf)[0])


@dataclass(frozen=True, eq=False)
class ClassAnnounce(Message):
    """Alice's intensity classes for the kept pulses of a frame, plus per-class pulses sent."""

    frame_number: int
    sent: tuple[int, int, int]
    classes: np.ndarray
    tag = CLASS_ANNOUNCE

    def payload(self) -> bytes:
        classes = _bits(self.classes)
        return struct.pack("<IIIII", self.frame_number, *self.sent, len(classes)) + classes.tobytes()

    @classmethod
    def parse(cls, buf):
        _need(buf, 20, "CLASS_ANNOUNCE")
        frame, s0, s1, s2, count = struct.unpack_from("<IIIII", buf)
        _need(buf, 20 + count, "CLASS_ANNOUNCE")
        _expect_end(buf, 20 + count, "CLASS_ANNOUNCE")
        classes = np.frombuffer(buf, dtype=np.uint8, count=count, offset=20).copy()
        return cls(frame, (s0, s1, s2), classes)


MESSAGE_TYPES: dict[int, type[Message]] = {
    cls.tag: cls
    for cls in (FrameAnnounce, DetectionReportMessage, SiftMask, SyndromeMessage, Verify, PaSeed,
                KeyConfirm, SyndromeRequest, ClassAnnounce)
}


def encode(message: Message) -> bytes:
    try:
        body = message.payload()
    except struct.error as exc:
        raise ProtocolError(f"cannot encode {type(message).__name__}: {exc}") from exc
    return HEADER.pack(message.tag, len(body)) + body


def decode(data: bytes) -> Message:
    """Decode exactly one message; trailing or missing bytes are framing errors."""
    msg, used = _decode_one(memoryview(bytes(data)))
    if msg is None:
        raise FramingError(f"truncated message: {len(data)} bytes")
    if used != len(data):
        raise FramingError(f"{len(data) - used} bytes after the end of the message")
    return msg


def _decode_one(buf: memoryview) -> tuple[Message | None, int]:
    if len(buf) < HEADER.size:
        return None, 0
    tag, length = HEADER.unpack_from(buf)
    cls = MESSAGE_TYPES.get(tag)
    if cls is None:
        raise ProtocolError(f"unknown message tag 0x{tag:02x}")
    if length > MAX_PAYLOAD:
        raise FramingError(f"declared payload of {length} bytes exceeds the limit")
    end = HEADER.size + length
    if len(buf) < end:
        return None, 0
    return cls.parse(buf[HEADER.size:end]), end


class MessageReader:
    """Incremental decoder for a byte stream carrying back-to-back messages."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[Message]:
        self._buf += data
        out = []
        view = memoryview(bytes(self._buf))
        pos = 0
        while True:
            msg, used = _decode_one(view[pos:])
            if msg is None:
                break
            out.append(msg)
            pos += used
        del self._buf[:pos]
        return out

    @property
    def pending_bytes(self) -> int:
        return len(self._buf)


def digest64(bits, key: int) -> int:
    """64-bit polynomial hash of a bit string modulo the Mersenne prime 2^61 - 1.

    ``key`` is the session's public evaluation point.  The bit count is
    mixed in, so strings that differ only by trailing zeros hash apart.
    """
    p = (1 << 61) - 1
    bits = _bits(bits)
    words = np.packbits(bits, bitorder="little")
    # Horner over 32-bit words, then fold in the length
    padded = np.zeros(-(-len(words) // 4) * 4, dtype=np.uint8)
    padded[: len(words)] = words
    acc = 0
    x = key % p
    for w in padded.view("<u4").tolist():
        acc = (acc * x + w + 1) % p
    acc = (acc * x + len(bits)) % p
    return acc
