import math

import numpy as np
import pytest

from qkdtime.channel import PulseConfig
from qkdtime.errors import InvalidBudgetError, InvalidParameterError
from qkdtime.framing import ClockConfig, StageDefaults, TimelineBudget, build_frame, duty_cycle, timeline

CLOCK = ClockConfig()  # 10^7 qubits at 100 MHz


def test_transmission_stage_from_clock():
    assert CLOCK.t_e_ms == 100.0
    assert ClockConfig(1e8, 123_456).t_e_ms == 123_456 * 1e3 / 1e8


@pytest.mark.parametrize("g, total", [(55, 845.00096), (130, 920.00096)])
def test_default_budget_totals(g, total):
    b = timeline(CLOCK, g, include_pol=True)
    assert b.total == pytest.approx(total, abs=1e-9)
    assert b.t_h == 140.0 and b.t_c == 0.00096


def test_pol_stage_dropped_when_not_included():
    assert timeline(CLOCK, 55, include_pol=False).total == pytest.approx(705.00096)


def test_zero_overhead_budget():
    b = TimelineBudget(0, 0, 0, 0, 100, 0, 0, 0)
    assert b.total == 100
    assert duty_cycle(b) == 1.0


@pytest.mark.parametrize("total, duty", [(920, 0.10870), (845, 0.11834)])
def test_duty_examples(total, duty):
    b = TimelineBudget(0, 0, 0, 0, 100, 0, total - 100, 0)
    assert abs(duty_cycle(b) - duty) < 1e-5


def test_duty_errors_and_validation():
    with pytest.raises(InvalidBudgetError):
        duty_cycle(TimelineBudget(0, 0, 0, 0, 0, 0, 0, 0))
    with pytest.raises(InvalidBudgetError):
        TimelineBudget(-1, 0, 0, 0, 1, 0, 0, 0)
    with pytest.raises(InvalidParameterError):
        timeline(CLOCK, -1, True)


@pytest.mark.parametrize("stage", ["t_a", "t_b", "t_c", "t_d", "t_f", "t_h"])
def test_duty_decreases_in_every_overhead(stage):
    base = StageDefaults()
    longer = StageDefaults(**{**vars(base), stage: getattr(base, stage) + 10})
    assert duty_cycle(timeline(CLOCK, 80, True, longer)) < duty_cycle(timeline(CLOCK, 80, True, base))
    assert duty_cycle(timeline(CLOCK, 90, True)) < duty_cycle(timeline(CLOCK, 80, True))


def test_build_frame_empty_and_deterministic():
    pulse = PulseConfig()
    assert len(build_frame(0, ClockConfig(1e8, 0), pulse, seed=1).qubits) == 0
    a = build_frame(5, ClockConfig(1e8, 1000), pulse, seed=[1, 2])
    b = build_frame(5, ClockConfig(1e8, 1000), pulse, seed=[1, 2])
    assert a == b
    assert a != build_frame(5, ClockConfig(1e8, 1000), pulse, seed=[1, 3])
    with pytest.raises(ValueError):
        a.bits[0] = 1  # frames are immutable


def test_build_frame_statistics():
    n = 10**6
    pulse = PulseConfig()
    frame = build_frame(0, ClockConfig(1e8, n), pulse, seed=7)
    half = 4 * math.sqrt(0.25 / n)
    assert abs(frame.bases.mean() - 0.5) < half
    assert abs(frame.bits.mean() - 0.5) < half
    freq = np.bincount(frame.classes, minlength=3) / n
    for f, p in zip(freq, pulse.class_probabilities):
        assert abs(f - p) < 4 * math.sqrt(p * (1 - p) / n)


def test_header_fields():
    frame = build_frame(3, ClockConfig(1e8, 10), PulseConfig(), seed=0, sender_addr=7, receiver_addr=9,
                        pol_control_flag=True)
    assert (frame.sender_addr, frame.receiver_addr, frame.pol_control_flag) == (7, 9, True)
    with pytest.raises(InvalidParameterError):
        build_frame(3, ClockConfig(1e8, 10), PulseConfig(), seed=0, sender_addr=256)
