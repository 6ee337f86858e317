"""Quantum frames and the per-frame stage-time budget.

A frame cycle runs through eight stages::

    a  bit/basis generation          e  qubit transmission
    b  transfer to the I/O card      f  deadtime
    c  classical control header      g  processing / idle (load dependent)
    d  deadtime                      h  polarization compensation
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .channel import PulseConfig
from .errors import InvalidBudgetError, InvalidParameterError


@dataclass(frozen=True)
class ClockConfig:
    clock_rate_hz: float = 1e8
    frame_qubits: int = 10**7

    def __post_init__(self):
        if self.clock_rate_hz <= 0:
            raise InvalidParameterError("clock_rate_hz must be > 0")
        if self.frame_qubits < 0:
            raise InvalidParameterError("frame_qubits must be >= 0")

    @property
    def t_e_ms(self) -> float:
        return self.frame_qubits * 1e3 / self.clock_rate_hz


@dataclass(frozen=True)
class StageDefaults:
    """Fixed stage durations in ms; ``t_h`` is the per-frame compensation average."""

    t_a: float = 225.0
    t_b: float = 225.0
    t_c: float = 960e-6
    t_d: float = 50.0
    t_f: float = 50.0
    t_h: float = 140.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise InvalidParameterError(f"{f.name} must be >= 0")


@dataclass(frozen=True)
class TimelineBudget:
    t_a: float
    t_b: float
    t_c: float
    t_d: float
    t_e: float
    t_f: float
    t_g: float
    t_h: float

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise InvalidBudgetError(f"stage {f.name} must be >= 0")

    @property
    def total(self) -> float:
        return self.t_a + self.t_b + self.t_c + self.t_d + self.t_e + self.t_f + self.t_g + self.t_h


@dataclass(frozen=True, eq=False)
class QuantumFrame:
    """Per-pulse bit, basis and intensity class plus the control-header fields.

    ``classes`` holds 0 (signal), 1 (decoy 1) or 2 (decoy 2).
    """

    frame_number: int
    bits: np.ndarray
    bases: np.ndarray
    classes: np.ndarray
    sender_addr: int = 0
    receiver_addr: int = 1
    pol_control_flag: bool = False

    def __post_init__(self):
        if not (len(self.bits) == len(self.bases) == len(self.classes)):
            raise InvalidParameterError("bits, bases and classes must have equal length")
        for addr in (self.sender_addr, self.receiver_addr):
            if not 0 <= addr < 256:
                raise InvalidParameterError("addresses are 8-bit")
        for arr in (self.bits, self.bases, self.classes):
            arr.flags.writeable = False

    def __len__(self):
        return len(self.bits)

    def __eq__(self, other):
        if not isinstance(other, QuantumFrame):
            return NotImplemented
        return (
            self.frame_number == other.frame_number
            and self.sender_addr == other.sender_addr
            and self.receiver_addr == other.receiver_addr
            and self.pol_control_flag == other.pol_control_flag
            and np.array_equal(self.bits, other.bits)
            and np.array_equal(self.bases, other.bases)
            and np.array_equal(self.classes, other.classes)
        )

    @property
    def qubits(self) -> list[tuple[int, int, int]]:
        return list(zip(self.bits.tolist(), self.bases.tolist(), self.classes.tolist()))


def build_frame(
    frame_number: int,
    clock: ClockConfig,
    pulse: PulseConfig,
    seed,
    sender_addr: int = 0,
    receiver_addr: int = 1,
    pol_control_flag: bool = False,
) -> QuantumFrame:
    """Draw i.i.d. uniform bits/bases and intensity classes from a seeded stream."""
    rng = np.random.default_rng(seed)
    n = clock.frame_qubits
    bits = rng.integers(0, 2, n, dtype=np.uint8)
    bases = rng.integers(0, 2, n, dtype=np.uint8)
    classes = rng.choice(3, size=n, p=pulse.class_probabilities).astype(np.uint8)
    return QuantumFrame(frame_number, bits, bases, classes, sender_addr, receiver_addr, pol_control_flag)


def timeline(
    clock: ClockConfig,
    g_ms: float,
    include_pol: bool,
    stages: StageDefaults = StageDefaults(),
) -> TimelineBudget:
    """Stage budget of one frame given the processing time ``g_ms``.

    ``include_pol`` adds the averaged compensation time ``stages.t_h``;
    otherwise stage h is zero.
    """
    if g_ms < 0:
        raise InvalidParameterError("g_ms must be >= 0")
    return TimelineBudget(
        t_a=stages.t_a,
        t_b=stages.t_b,
        t_c=stages.t_c,
        t_d=stages.t_d,
        t_e=clock.t_e_ms,
        t_f=stages.t_f,
        t_g=g_ms,
        t_h=stages.t_h if include_pol else 0.0,
    )


def duty_cycle(budget: TimelineBudget) -> float:
    """Fraction of operation time spent transmitting qubits."""
    total = budget.total
    if total <= 0:
        raise InvalidBudgetError("budget total must be > 0")
    return budget.t_e / total
