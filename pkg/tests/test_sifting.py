import math

import numpy as np
import pytest

from qkdtime.channel import DetectionEvent, Detections, PulseConfig
from qkdtime.errors import InvalidParameterError, ProtocolViolationError
from qkdtime.framing import ClockConfig, QuantumFrame, build_frame
from qkdtime.sifting import (
    BlockBuffer,
    DecoyTally,
    DetectionReport,
    accumulate_tally,
    collapse_coincidences,
    report_from_detections,
    sift,
    sifted_fraction_bounds,
)


def ev(i, detector, coincidence=False):
    return DetectionEvent(i, detector, detector // 2, detector % 2, coincidence)


def test_collapse_without_coincidences_is_identity():
    events = [ev(1, 0), ev(4, 3), ev(9, 2)]
    assert collapse_coincidences(events, seed=0) == events
    assert collapse_coincidences([], seed=0) == []


def test_collapse_keeps_exactly_one_per_gate():
    events = [ev(2, 0, True), ev(2, 1, True), ev(2, 3, True), ev(5, 2)]
    for seed in range(50):
        out = collapse_coincidences(events, seed)
        assert [e.pulse_index for e in out] == [2, 5]


def test_collapse_is_fair():
    events = [ev(0, 0, True), ev(0, 3, True)]
    trials = 10**4
    kept_first = sum(collapse_coincidences(events, seed)[0].detector_id == 0 for seed in range(trials))
    assert abs(kept_first / trials - 0.5) < 4 * math.sqrt(0.25 / trials)


def test_collapse_requires_sorted_input():
    with pytest.raises(InvalidParameterError):
        collapse_coincidences([ev(5, 0), ev(2, 1)], seed=0)


def _frame(bits, bases, classes):
    return QuantumFrame(0, np.array(bits, np.uint8), np.array(bases, np.uint8), np.array(classes, np.uint8))


def test_sift_with_forced_equal_bases():
    frame = build_frame(0, ClockConfig(1e8, 100), PulseConfig(), seed=1)
    idx = np.arange(0, 100, 7)
    report = DetectionReport(0, idx, frame.bases[idx])
    alice, bob, keep = sift(frame, report, frame.bits[idx])
    assert keep.all() and len(alice) == len(bob) == len(report)
    np.testing.assert_array_equal(alice.bits, bob.bits)
    np.testing.assert_array_equal(alice.pulse_index, bob.pulse_index)
    np.testing.assert_array_equal(alice.intensity_class, frame.classes[idx])


def test_sift_kept_fraction_is_half():
    n = 10**6
    rng = np.random.default_rng(3)
    frame = _frame(rng.integers(0, 2, n), rng.integers(0, 2, n), np.zeros(n))
    report = DetectionReport(0, np.arange(n), rng.integers(0, 2, n))
    _, _, keep = sift(frame, report, rng.integers(0, 2, n))
    lo, hi = sifted_fraction_bounds(n)
    assert lo <= keep.mean() <= hi
    assert hi - lo == pytest.approx(0.004)


def test_sift_rejects_bad_reports():
    frame = _frame([0, 1, 1], [0, 0, 1], [0, 0, 0])
    with pytest.raises(ProtocolViolationError):
        sift(frame, DetectionReport(0, [1, 5], [0, 0]), [0, 0])
    with pytest.raises(ProtocolViolationError):
        DetectionReport(0, [2, 1], [0, 0])
    with pytest.raises(ProtocolViolationError):
        sift(frame, DetectionReport(0, [1], [0]), [0, 1])


def test_tally_bookkeeping():
    frame = _frame([0, 1, 1, 0, 1], [0, 1, 0, 1, 1], [0, 0, 1, 2, 0])
    report = DetectionReport(0, [0, 1, 3], [0, 1, 0])
    _, _, keep = sift(frame, report, [0, 0, 0])
    assert keep.tolist() == [True, True, False]
    tally = accumulate_tally(DecoyTally(), frame, report, keep, error_positions=[1])
    assert tally.sent == (3, 1, 1)
    assert tally.detected == (2, 0, 0)
    assert tally.errors == (1, 0, 0)

    empty = _frame([], [], [])
    none = DetectionReport(1, [], [])
    assert accumulate_tally(tally, empty, none, np.zeros(0, bool)) == tally


def test_tally_invariants_and_csv_round_trip():
    with pytest.raises(InvalidParameterError):
        DecoyTally((10, 1, 1), (11, 0, 0), (0, 0, 0))
    t = DecoyTally((100, 20, 20), (10, 3, 1), (1, 0, 0), (9, 3, 1))
    assert DecoyTally.from_csv(t.to_csv()) == t
    legacy = "class,sent,detected,errors\nmu,5,2,1\nnu1,5,1,0\nnu2,5,0,0\n"
    assert DecoyTally.from_csv(legacy) == DecoyTally((5, 5, 5), (2, 1, 0), (1, 0, 0))


def test_fifteen_hour_tally_does_not_overflow():
    # about 6.1e4 frames of 10^7 pulses
    frames = 61_400
    per_frame = DecoyTally((8_750_000, 625_000, 625_000), (5_000, 80, 3), (130, 3, 1))
    total = DecoyTally(*(tuple(frames * v for v in getattr(per_frame, f)) for f in ("sent", "detected", "errors")))
    assert total.sent[0] == frames * 8_750_000 > 2**32
    assert sum(total.sent) == frames * 10**7


def test_report_and_conservation():
    det = Detections(np.array([1, 4, 6]), np.array([0, 3, 2]), np.zeros(3, bool))
    report, bob_bits = report_from_detections(2, det)
    assert report.entries == [(1, 0), (4, 1), (6, 1)]
    assert bob_bits.tolist() == [0, 1, 0]
    frame = _frame([1] * 8, [0, 0, 0, 0, 1, 1, 0, 0], [0, 1, 2, 0, 1, 2, 0, 1])
    alice, bob, keep = sift(frame, report, bob_bits)
    tally = accumulate_tally(DecoyTally(), frame, report, keep)
    assert sum(tally.detected) == len(alice) == keep.sum() <= len(report) <= len(frame)


def test_block_buffer_carries_residual_bits():
    buf = BlockBuffer(block_size=10)
    frame = build_frame(0, ClockConfig(1e8, 30), PulseConfig(), seed=0)
    idx = np.arange(30)
    alice, _, _ = sift(frame, DetectionReport(0, idx, frame.bases), frame.bits)
    buf.push(alice[:7])
    assert buf.pop_block() is None
    buf.push(alice[7:25])
    first = buf.pop_block()
    second = buf.pop_block()
    assert len(first) == len(second) == 10 and len(buf) == 5 and buf.pop_block() is None
    np.testing.assert_array_equal(np.concatenate([first.bits, second.bits]), alice.bits[:20])
