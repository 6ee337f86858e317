"""Coincidence handling, basis reconciliation and decoy tallies."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .channel import CLASS_NAMES, N_CLASSES, DetectionEvent, Detections
from .errors import InvalidParameterError, ProtocolViolationError

DEFAULT_BLOCK_SIZE = 10_000


@dataclass(frozen=True, eq=False)
class DetectionReport:
    """Bob's announcement: which pulses clicked and in which basis (bits withheld)."""

    frame_number: int
    pulse_index: np.ndarray
    bob_basis: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "pulse_index", np.asarray(self.pulse_index, dtype=np.int64))
        object.__setattr__(self, "bob_basis", np.asarray(self.bob_basis, dtype=np.uint8))
        if self.pulse_index.shape != self.bob_basis.shape:
            raise InvalidParameterError("pulse_index and bob_basis must have equal length")
        if self.pulse_index.size and np.any(np.diff(self.pulse_index) <= 0):
            raise ProtocolViolationError("report indices must be strictly increasing")

    def __len__(self):
        return len(self.pulse_index)

    def __eq__(self, other):
        if not isinstance(other, DetectionReport):
            return NotImplemented
        return (
            self.frame_number == other.frame_number
            and np.array_equal(self.pulse_index, other.pulse_index)
            and np.array_equal(self.bob_basis, other.bob_basis)
        )

    @property
    def entries(self) -> list[tuple[int, int]]:
        return list(zip(self.pulse_index.tolist(), self.bob_basis.tolist()))


@dataclass(frozen=True, eq=False)
class SiftedBlock:
    """Key bits with their origin (frame, pulse) and intensity class, position aligned."""

    bits: np.ndarray
    frame_number: np.ndarray
    pulse_index: np.ndarray
    intensity_class: np.ndarray

    def __post_init__(self):
        n = len(self.bits)
        if not (len(self.frame_number) == len(self.pulse_index) == len(self.intensity_class) == n):
            raise InvalidParameterError("block fields must have equal length")

    def __len__(self):
        return len(self.bits)

    @property
    def origin(self) -> list[tuple[int, int]]:
        return list(zip(self.frame_number.tolist(), self.pulse_index.tolist()))

    @classmethod
    def empty(cls) -> "SiftedBlock":
        return cls(np.empty(0, np.uint8), np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0, np.uint8))

    @classmethod
    def concat(cls, blocks) -> "SiftedBlock":
        blocks = list(blocks)
        if not blocks:
            return cls.empty()
        return cls(
            np.concatenate([b.bits for b in blocks]).astype(np.uint8),
            np.concatenate([b.frame_number for b in blocks]).astype(np.int64),
            np.concatenate([b.pulse_index for b in blocks]).astype(np.int64),
            np.concatenate([b.intensity_class for b in blocks]).astype(np.uint8),
        )

    def __getitem__(self, sl) -> "SiftedBlock":
        return SiftedBlock(self.bits[sl], self.frame_number[sl], self.pulse_index[sl], self.intensity_class[sl])

    def with_bits(self, bits) -> "SiftedBlock":
        return SiftedBlock(np.asarray(bits, dtype=np.uint8), self.frame_number, self.pulse_index, self.intensity_class)


@dataclass(frozen=True)
class DecoyTally:
    """Per-class counts: pulses sent, matched-basis detections, bit errors.

    ``checked`` is the number of detections whose error status is known
    (equal to ``detected`` when every sifted bit went through error
    correction).  Empirical QBER per class is ``errors / checked``.
    """

    sent: tuple[int, int, int] = (0, 0, 0)
    detected: tuple[int, int, int] = (0, 0, 0)
    errors: tuple[int, int, int] = (0, 0, 0)
    checked: tuple[int, int, int] | None = None

    def __post_init__(self):
        for name in ("sent", "detected", "errors"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        checked = self.detected if self.checked is None else tuple(int(v) for v in self.checked)
        object.__setattr__(self, "checked", checked)
        for x in range(N_CLASSES):
            if not (0 <= self.errors[x] <= self.checked[x] <= self.detected[x] <= self.sent[x]):
                raise InvalidParameterError(
                    f"tally for {CLASS_NAMES[x]} violates errors <= checked <= detected <= sent"
                )

    def __add__(self, other: "DecoyTally") -> "DecoyTally":
        return DecoyTally(
            tuple(a + b for a, b in zip(self.sent, other.sent)),
            tuple(a + b for a, b in zip(self.detected, other.detected)),
            tuple(a + b for a, b in zip(self.errors, other.errors)),
            tuple(a + b for a, b in zip(self.checked, other.checked)),
        )

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["class", "sent", "detected", "errors", "checked"])
        for x in range(N_CLASSES):
            w.writerow([CLASS_NAMES[x], self.sent[x], self.detected[x], self.errors[x], self.checked[x]])
        return out.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "DecoyTally":
        """Parse ``class,sent,detected,errors[,checked]`` rows; missing classes count zero."""
        rows = list(csv.DictReader(io.StringIO(text)))
        required = {"class", "sent", "detected", "errors"}
        if not rows or not required <= set(rows[0]):
            raise InvalidParameterError(f"tally CSV needs columns {sorted(required)}")
        sent, detected, errors, checked = ([0] * N_CLASSES for _ in range(4))
        aliases = {"mu": 0, "nu1": 1, "nu2": 2}
        for row in rows:
            key = row["class"].strip()
            idx = CLASS_NAMES.index(key) if key in CLASS_NAMES else aliases.get(key)
            if idx is None:
                raise InvalidParameterError(f"unknown class {key!r} in tally CSV")
            sent[idx] += int(row["sent"])
            detected[idx] += int(row["detected"])
            errors[idx] += int(row["errors"])
            raw_checked = (row.get("checked") or "").strip()
            checked[idx] += int(raw_checked) if raw_checked else int(row["detected"])
        return cls(tuple(sent), tuple(detected), tuple(errors), tuple(checked))


def collapse_coincidences(events, seed):
    """Keep one uniformly chosen detection per gate.

    Accepts a list of :class:`DetectionEvent` or a :class:`Detections`
    and returns the same kind.
    """
    as_list = not isinstance(events, Detections)
    det = Detections.from_events(events) if as_list else events
    if len(det) == 0:
        return [] if as_list else det
    idx = det.pulse_index
    if np.any(np.diff(idx) < 0):
        raise InvalidParameterError("events must be sorted by pulse_index")
    if not np.any(idx[1:] == idx[:-1]):
        return list(events) if as_list else det
    rng = np.random.default_rng(seed)
    order = np.lexsort((rng.random(len(idx)), idx))
    first = np.ones(len(idx), dtype=bool)
    first[1:] = idx[order][1:] != idx[order][:-1]
    keep = np.sort(order[first])
    out = Detections(det.pulse_index[keep], det.detector_id[keep], det.is_coincidence[keep])
    return out.events() if as_list else out


def report_from_detections(frame_number: int, det) -> tuple[DetectionReport, np.ndarray]:
    """Split collapsed detections into the public report and Bob's private bits."""
    if not isinstance(det, Detections):
        det = Detections.from_events(det)
    return DetectionReport(frame_number, det.pulse_index, det.bob_basis), det.bob_bit.astype(np.uint8)


def keep_mask_for(frame, report: DetectionReport) -> np.ndarray:
    """Alice's side of sifting: which reported entries used her basis."""
    idx = report.pulse_index
    if idx.size and (idx[0] < 0 or idx[-1] >= len(frame)):
        raise ProtocolViolationError(f"report index out of range for frame of {len(frame)} pulses")
    return frame.bases[idx] == report.bob_basis


def sift(frame, report: DetectionReport, bob_bits) -> tuple[SiftedBlock, SiftedBlock, np.ndarray]:
    """Keep matched-basis detections; returns (alice_block, bob_block, keep_mask)."""
    bob_bits = np.asarray(bob_bits, dtype=np.uint8)
    if len(bob_bits) != len(report):
        raise ProtocolViolationError("bob_bits must align with the report entries")
    keep = keep_mask_for(frame, report)
    idx = report.pulse_index[keep]
    frames = np.full(len(idx), report.frame_number, dtype=np.int64)
    classes = frame.classes[idx].astype(np.uint8)
    alice = SiftedBlock(frame.bits[idx].astype(np.uint8), frames, idx, classes)
    bob = SiftedBlock(bob_bits[keep], frames, idx, classes)
    return alice, bob, keep


def accumulate_tally(
    tally: DecoyTally,
    frame,
    report: DetectionReport,
    keep_mask,
    error_positions=(),
    gate_stride: int = 1,
) -> DecoyTally:
    """Add one frame to ``tally``.

    ``error_positions`` index into the frame's sifted bits (the kept entries
    of the report, in order).
    """
    keep_mask = np.asarray(keep_mask, dtype=bool)
    sent = np.bincount(frame.classes[::gate_stride], minlength=N_CLASSES)
    kept_classes = frame.classes[report.pulse_index[keep_mask]]
    detected = np.bincount(kept_classes, minlength=N_CLASSES)
    error_positions = np.asarray(error_positions, dtype=np.int64)
    errors = np.bincount(kept_classes[error_positions], minlength=N_CLASSES)
    return tally + DecoyTally(tuple(sent), tuple(detected), tuple(errors))


@dataclass
class BlockBuffer:
    """Accumulates sifted bits and releases fixed-size reconciliation blocks.

    Residual bits carry over to the next block.
    """

    block_size: int = DEFAULT_BLOCK_SIZE
    _parts: list = field(default_factory=list)
    _count: int = 0

    def __len__(self):
        return self._count

    def push(self, block: SiftedBlock) -> None:
        if len(block):
            self._parts.append(block)
            self._count += len(block)

    def pop_block(self) -> SiftedBlock | None:
        if self._count < self.block_size:
            return None
        joined = SiftedBlock.concat(self._parts)
        head, tail = joined[: self.block_size], joined[self.block_size:]
        self._parts = [tail] if len(tail) else []
        self._count = len(tail)
        return head


def sifted_fraction_bounds(n: int, p: float = 0.5, sigmas: float = 4.0) -> tuple[float, float]:
    """Binomial acceptance interval for an empirical kept fraction."""
    half = sigmas * np.sqrt(p * (1 - p) / n)
    return p - half, p + half

