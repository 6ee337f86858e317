import struct

import numpy as np
import pytest

from qkdtime.errors import FramingError, ProtocolError
from qkdtime.link import (
    ClassAnnounce,
    DetectionReportMessage,
    FrameAnnounce,
    KeyConfirm,
    MessageReader,
    PaSeed,
    SiftMask,
    SyndromeMessage,
    SyndromeRequest,
    Verify,
    decode,
    digest64,
    encode,
    pack_bitmap,
    unpack_bitmap,
)


def random_message(rng: np.random.Generator):
    u32 = lambda: int(rng.integers(0, 2**32))  # noqa: E731
    n = int(rng.integers(0, 70))
    bits = lambda: rng.integers(0, 2, n, dtype=np.uint8)  # noqa: E731
    kind = int(rng.integers(0, 9))
    if kind == 0:
        return FrameAnnounce(u32(), u32())
    if kind == 1:
        return DetectionReportMessage(u32(), np.sort(rng.integers(0, 2**32, n)), bits())
    if kind == 2:
        return SiftMask(u32(), bits())
    if kind == 3:
        return SyndromeMessage(u32(), u32(), bits())
    if kind == 4:
        return Verify(u32(), int(rng.integers(0, 2**63)) * 2 + 1)
    if kind == 5:
        return PaSeed(u32(), u32(), bits())
    if kind == 6:
        return KeyConfirm(int(rng.integers(0, 2**63)))
    if kind == 7:
        return SyndromeRequest(u32())
    return ClassAnnounce(u32(), (u32(), u32(), u32()), rng.integers(0, 3, n, dtype=np.uint8))


def test_random_round_trip():
    rng = np.random.default_rng(0)
    for _ in range(10**4):
        msg = random_message(rng)
        assert decode(encode(msg)) == msg


def test_frame_announce_bytes():
    assert encode(FrameAnnounce(7, 16)) == bytes([0x01, 8, 0, 0, 0, 7, 0, 0, 0, 16, 0, 0, 0])


def test_bitmap_layout_is_lsb_first():
    assert pack_bitmap([1, 0, 0, 0, 0, 0, 0, 0, 1, 1]) == struct.pack("<I", 10) + bytes([0x01, 0x03])
    bits, end = unpack_bitmap(memoryview(pack_bitmap([1, 1, 0])), 0)
    assert bits.tolist() == [1, 1, 0] and end == 5
    assert pack_bitmap([]) == b"\x00\x00\x00\x00"
    with pytest.raises(ProtocolError):
        pack_bitmap([0, 2])


def test_unknown_tag():
    with pytest.raises(ProtocolError, match="0xff"):
        decode(bytes([0xFF, 0, 0, 0, 0]))


def test_truncation_and_trailing_bytes():
    wire = encode(SiftMask(3, np.ones(20, np.uint8)))
    for cut in range(len(wire)):
        with pytest.raises(FramingError):
            decode(wire[:cut])
    with pytest.raises(FramingError):
        decode(wire + b"\x00")
    # header claims a longer bitmap than the payload holds
    bad = bytes([0x03]) + struct.pack("<I", 8) + struct.pack("<II", 3, 40)
    with pytest.raises(FramingError):
        decode(bad)
    # fixed-size payload with a trailing byte
    with pytest.raises(FramingError):
        decode(bytes([0x07]) + struct.pack("<I", 9) + bytes(9))


def test_encode_rejects_out_of_range_fields():
    with pytest.raises(ProtocolError):
        encode(FrameAnnounce(2**32, 1))


def test_reader_handles_arbitrary_chunking():
    rng = np.random.default_rng(1)
    msgs = [random_message(rng) for _ in range(200)]
    stream = b"".join(encode(m) for m in msgs)
    reader = MessageReader()
    out = []
    pos = 0
    while pos < len(stream):
        step = int(rng.integers(1, 40))
        out += reader.feed(stream[pos:pos + step])
        pos += step
    assert out == msgs and reader.pending_bytes == 0
    partial = MessageReader()
    assert partial.feed(stream[:3]) == [] and partial.pending_bytes == 3


def digest_oracle(bits, key):
    """Word-by-word Horner evaluation with Python integers."""
    p = 2**61 - 1
    data = bytearray((len(bits) + 7) // 8)
    for i, b in enumerate(bits):
        data[i // 8] |= int(b) << (i % 8)
    data += bytes(-len(data) % 4)
    acc = 0
    for i in range(0, len(data), 4):
        acc = (acc * key + int.from_bytes(data[i:i + 4], "little") + 1) % p
    return (acc * key + len(bits)) % p


def test_digest_matches_oracle_and_separates_strings():
    rng = np.random.default_rng(2)
    key = 123456789012345
    for n in (0, 1, 31, 32, 33, 1000):
        bits = rng.integers(0, 2, n, dtype=np.uint8)
        assert digest64(bits, key) == digest_oracle(bits.tolist(), key)
    a = rng.integers(0, 2, 500, dtype=np.uint8)
    b = a.copy()
    b[250] ^= 1
    assert digest64(a, key) != digest64(b, key)
    assert digest64(a, key) != digest64(np.append(a, 0), key)
    assert 0 <= digest64(a, key) < 2**61 - 1
