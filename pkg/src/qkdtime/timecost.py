"""Discrete-event model of the frame loop and the post-processing that competes with it.

Alice repeats stages a-h of a frame cycle.  Generation (a) and transfer
(b) run on her CPU; c, d, e and f are hardware-timed.  After f she
processes the frame (stage g) until her CPU is done with it, and then
blocks for polarization compensation (stage h) when the most recent
error-correction QBER estimate is above threshold.

Bob logs each frame, sifts it, and feeds fixed-size blocks to an error
correction worker.  Work on each host is served by a processor-sharing
CPU: every process with a job in hand gets an equal slice of the
capacity.  The photon statistics of a frame are drawn at count level
(:func:`~qkdtime.channel.sample_frame_counts`), which makes a 10^7-pulse
frame cost O(1).
"""

from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .channel import (
    N_CLASSES,
    ChannelParams,
    DetectorParams,
    DriftParams,
    PulseConfig,
    drift_step,
    sample_frame_counts,
)
from .decoy import KeyRateParams, TallyAnalysis, analyze_tally
from .errors import InsufficientDataError, InvalidParameterError
from .framing import ClockConfig, StageDefaults
from .ldpc import required_checks
from .privacy import final_key_length
from .sifting import DEFAULT_BLOCK_SIZE, DecoyTally

CPU_POLICIES = ("fair_share", "fifo")
QUEUE_DISCIPLINES = ("lifo", "fifo")


@dataclass(frozen=True)
class TaskSpec:
    """Duration model of one pipeline task: ``fixed_ms + per_bit_ms * bits``.

    Hardware tasks occupy wall-clock time but no CPU.
    """

    kind: str
    fixed_ms: float = 0.0
    per_bit_ms: float = 0.0
    hardware: bool = False

    def __post_init__(self):
        if self.fixed_ms < 0 or self.per_bit_ms < 0:
            raise InvalidParameterError(f"task {self.kind}: durations must be >= 0")

    def duration(self, bits: int = 0) -> float:
        return self.fixed_ms + self.per_bit_ms * bits


@dataclass(frozen=True)
class ControlParams:
    qber_threshold: float = 0.035
    comp_duration_ms: float = 3000.0
    powermeter_rate_hz: float = 1.0

    def __post_init__(self):
        if not 0 < self.qber_threshold < 0.5:
            raise InvalidParameterError("qber_threshold must lie in (0, 0.5)")
        if self.powermeter_rate_hz <= 0:
            raise InvalidParameterError("powermeter_rate_hz must be > 0")
        if self.comp_duration_ms < 1000.0 / self.powermeter_rate_hz:
            raise InvalidParameterError(
                "comp_duration_ms must cover at least one powermeter reading (1000 / powermeter_rate_hz)"
            )


@dataclass(frozen=True)
class CpuModel:
    """Per-host capacity in ms of work per wall-clock ms; ``math.inf`` is allowed."""

    alice_capacity: float = 1.0
    bob_capacity: float = 1.0
    policy: str = "fair_share"

    def __post_init__(self):
        if not (self.alice_capacity > 0 and self.bob_capacity > 0):
            raise InvalidParameterError("CPU capacity must be > 0")
        if self.policy not in CPU_POLICIES:
            raise InvalidParameterError(f"policy must be one of {CPU_POLICIES}")


@dataclass(frozen=True)
class TaskCosts:
    """CPU costs of the post-processing tasks.

    The error-correction cost is per sifted bit, so its reciprocal is the
    standalone throughput in kbps (bits per ms).
    """

    alice_post_fixed_ms: float = 35.0
    alice_post_per_raw_bit_ms: float = 6.8e-4
    logging_ms: float = 20.0
    sift_per_raw_bit_ms: float = 4.4e-3
    ec_per_bit_ms: float = 1 / 53.213

    def __post_init__(self):
        for name, value in vars(self).items():
            if value < 0:
                raise InvalidParameterError(f"{name} must be >= 0")

    @property
    def ec_capacity_kbps(self) -> float:
        return math.inf if self.ec_per_bit_ms == 0 else 1.0 / self.ec_per_bit_ms


@dataclass(frozen=True)
class ReconcileParams:
    """Block reconciliation settings.

    A block fails when its QBER is above ``max_decodable_qber``, the
    largest error rate the block code reliably handles.  Each successful
    block discloses its syndrome plus ``verify_bits`` of digests.
    """

    block_size: int = DEFAULT_BLOCK_SIZE
    f_ec: float = 1.2
    design_qber: float = 0.035
    max_decodable_qber: float = 0.04
    verify_bits: int = 128
    queue: str = "lifo"
    s_margin: int = 0

    def __post_init__(self):
        if self.block_size < 1:
            raise InvalidParameterError("block_size must be >= 1")
        if self.f_ec < 1:
            raise InvalidParameterError("f_ec must be >= 1")
        if not 0 < self.design_qber < 0.11:
            raise InvalidParameterError("design_qber must lie in (0, 0.11)")
        if not 0 < self.max_decodable_qber <= 0.5:
            raise InvalidParameterError("max_decodable_qber must lie in (0, 0.5]")
        if self.verify_bits < 0 or self.s_margin < 0:
            raise InvalidParameterError("verify_bits and s_margin must be >= 0")
        if self.queue not in QUEUE_DISCIPLINES:
            raise InvalidParameterError(f"queue must be one of {QUEUE_DISCIPLINES}")

    @property
    def leakage_per_block(self) -> int:
        return required_checks(self.block_size, self.design_qber, self.f_ec) + self.verify_bits


@dataclass(frozen=True)
class Scenario:
    pulse: PulseConfig = field(default_factory=PulseConfig)
    channel: ChannelParams = field(default_factory=ChannelParams)
    detectors: DetectorParams = field(default_factory=DetectorParams)
    clock: ClockConfig = field(default_factory=ClockConfig)
    stages: StageDefaults = field(default_factory=StageDefaults)
    control: ControlParams = field(default_factory=ControlParams)
    cpu: CpuModel = field(default_factory=CpuModel)
    costs: TaskCosts = field(default_factory=TaskCosts)
    reconcile: ReconcileParams = field(default_factory=ReconcileParams)
    pol_compensation: bool = True
    link_delay_ms: float = 0.0
    sample_interval_ms: float = 10_000.0
    y0: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.link_delay_ms < 0:
            raise InvalidParameterError("link_delay_ms must be >= 0")
        if self.sample_interval_ms <= 0:
            raise InvalidParameterError("sample_interval_ms must be > 0")

    def with_mu(self, mu: float) -> "Scenario":
        """Same scenario with the signal intensity changed and the decoy ratios kept."""
        p = self.pulse
        pulse = PulseConfig(mu, mu * p.nu1 / p.mu, mu * p.nu2 / p.mu, p.class_probabilities)
        return replace(self, pulse=pulse)

    def task_specs(self) -> dict[str, TaskSpec]:
        st, c = self.stages, self.costs
        return {
            "frame_gen": TaskSpec("frame_gen", st.t_a),
            "data_transfer": TaskSpec("data_transfer", st.t_b),
            "header": TaskSpec("header", st.t_c, hardware=True),
            "deadtime_d": TaskSpec("deadtime_d", st.t_d, hardware=True),
            "qubit_tx": TaskSpec("qubit_tx", self.clock.t_e_ms, hardware=True),
            "deadtime_f": TaskSpec("deadtime_f", st.t_f, hardware=True),
            "alice_post": TaskSpec("alice_post", c.alice_post_fixed_ms, c.alice_post_per_raw_bit_ms),
            "logging": TaskSpec("logging", c.logging_ms),
            "sifting": TaskSpec("sifting", 0.0, c.sift_per_raw_bit_ms),
            "error_correction": TaskSpec("error_correction", 0.0, c.ec_per_bit_ms),
            "pol_comp": TaskSpec("pol_comp", self.control.comp_duration_ms, hardware=True),
        }


def calibration_scenario(**overrides) -> Scenario:
    """Fast single-detector receiver with CPU costs calibrated to the reference curve.

    One free-running detector at the 100 MHz clock; 10 dB total channel
    loss; error-correction throughput 53.213 kbps standalone.
    """
    base = Scenario(
        pulse=PulseConfig.with_fixed_ratios(2.0),
        channel=ChannelParams(e_det=0.02, drift=DriftParams(step_sigma=0.005)),
        detectors=DetectorParams(efficiency=0.025, gate_rate_hz=1e8, detector_count=1),
    )
    return replace(base, **overrides)


def four_detector_scenario(**overrides) -> Scenario:
    """Four gated detectors at 1 MHz with 10% efficiency."""
    base = Scenario(
        pulse=PulseConfig.with_fixed_ratios(0.5),
        channel=ChannelParams(e_det=0.02, drift=DriftParams(step_sigma=0.005)),
        detectors=DetectorParams(efficiency=0.1, gate_rate_hz=1e6, detector_count=4),
    )
    return replace(base, **overrides)


# --------------------------------------------------------------------------
# processor-sharing CPU


class _Job:
    __slots__ = ("work", "remaining", "on_done", "started")

    def __init__(self, work: float, on_done):
        self.work = work
        self.remaining = work
        self.on_done = on_done
        self.started = math.inf


class _Process:
    """A serial worker: one job in service, the rest queued."""

    def __init__(self, name: str, discipline: str = "fifo"):
        self.name = name
        self.discipline = discipline
        self.pending: deque = deque()
        self.current: _Job | None = None

    def next_job(self) -> _Job | None:
        if not self.pending:
            return None
        return self.pending.pop() if self.discipline == "lifo" else self.pending.popleft()


class _Host:
    def __init__(self, capacity: float, policy: str):
        self.capacity = capacity
        self.policy = policy
        self.processes: list[_Process] = []

    def process(self, name: str, discipline: str = "fifo") -> _Process:
        p = _Process(name, discipline)
        self.processes.append(p)
        return p

    def _rates(self) -> list[tuple[_Job, float]]:
        busy = [p.current for p in self.processes if p.current is not None]
        if not busy:
            return []
        if self.policy == "fifo":
            first = min(busy, key=lambda j: j.started)
            return [(j, self.capacity if j is first else 0.0) for j in busy]
        share = self.capacity / len(busy)
        return [(j, share) for j in busy]

    def next_completion(self, now: float) -> float:
        best = math.inf
        for job, rate in self._rates():
            if job.remaining <= 0:
                return now
            if rate > 0:
                best = min(best, now + job.remaining / rate)
        return best

    def advance(self, dt: float) -> None:
        # an infinite-capacity job finishes in zero time, so it must be cleared even when dt == 0
        for job, rate in self._rates():
            if math.isinf(rate):
                job.remaining = 0.0
            elif rate > 0 and dt > 0:
                job.remaining -= rate * dt

    def finished(self) -> list[_Process]:
        return [
            p for p in self.processes
            if p.current is not None and p.current.remaining <= 1e-9 * max(1.0, p.current.work)
        ]


class _EventLoop:
    def __init__(self):
        self.now = 0.0
        self._heap: list = []
        self._seq = 0
        self.hosts: list[_Host] = []

    def at(self, t: float, callback) -> None:
        heapq.heappush(self._heap, (t, self._seq, callback))
        self._seq += 1

    def after(self, dt: float, callback) -> None:
        self.at(self.now + dt, callback)

    def submit(self, proc: _Process, work: float, on_done) -> None:
        proc.pending.append(_Job(work, on_done))
        if proc.current is None:
            self._start_next(proc)

    def _start_next(self, proc: _Process) -> None:
        job = proc.next_job()
        proc.current = job
        if job is not None:
            job.started = self.now

    def run(self, stop) -> None:
        while not stop():
            t_ext = self._heap[0][0] if self._heap else math.inf
            t_cpu = min((h.next_completion(self.now) for h in self.hosts), default=math.inf)
            t = min(t_ext, t_cpu)
            if math.isinf(t):
                return
            for h in self.hosts:
                h.advance(t - self.now)
            self.now = t
            if t_cpu <= t_ext:
                for h in self.hosts:
                    for proc in h.finished():
                        job = proc.current
                        self._start_next(proc)
                        job.on_done()
            else:
                _, _, callback = heapq.heappop(self._heap)
                callback()


# --------------------------------------------------------------------------
# metrics


SERIES_COLUMNS = (
    "time_ms",
    "frames",
    "raw_bits",
    "sifted_bits",
    "corrected_bits",
    "ec_queue_blocks",
    "sift_queue_frames",
    "drift_qber",
    "compensations",
)


@dataclass
class PipelineMetrics:
    """Cumulative counts of one run; rates use total elapsed time as denominator."""

    elapsed_ms: float = 0.0
    frames: int = 0
    raw_bits: int = 0
    sifted_bits: int = 0
    sifted_errors: int = 0
    corrected_bits: int = 0
    corrected_signal_bits: int = 0
    blocks_ok: int = 0
    blocks_failed: int = 0
    compensations: int = 0
    transmit_ms: float = 0.0
    compensation_ms: float = 0.0
    g_ms: list = field(default_factory=list)
    tally: DecoyTally = field(default_factory=DecoyTally)
    leakage_bits: int = 0
    secret_bits: int = 0
    analysis: TallyAnalysis | None = None
    series: list = field(default_factory=list)

    def _rate(self, bits: float) -> float:
        return bits / self.elapsed_ms if self.elapsed_ms > 0 else 0.0

    @property
    def raw_rate(self) -> float:
        """kbps (bits per ms)."""
        return self._rate(self.raw_bits)

    @property
    def sifted_rate(self) -> float:
        return self._rate(self.sifted_bits)

    @property
    def corrected_rate(self) -> float:
        return self._rate(self.corrected_bits)

    @property
    def secret_rate(self) -> float:
        return self._rate(self.secret_bits)

    @property
    def qber(self) -> float:
        return self.sifted_errors / self.sifted_bits if self.sifted_bits else float("nan")

    @property
    def mean_g_ms(self) -> float:
        return float(np.mean(self.g_ms)) if self.g_ms else 0.0

    @property
    def mean_h_ms(self) -> float:
        return self.compensation_ms / self.frames if self.frames else 0.0

    def series_array(self) -> np.ndarray:
        return np.array(self.series, dtype=float).reshape(-1, len(SERIES_COLUMNS))


def duty_report(metrics: PipelineMetrics) -> float:
    """Fraction of wall-clock time spent transmitting qubits."""
    return metrics.transmit_ms / metrics.elapsed_ms if metrics.elapsed_ms > 0 else 0.0


# --------------------------------------------------------------------------
# the simulation


class _Pipeline:
    # block buffer categories: (class, error) pairs, class-major
    _CATS = 2 * N_CLASSES

    def __init__(self, scenario: Scenario, n_frames: int | None, duration_ms: float | None):
        self.sc = scenario
        self.n_frames = n_frames
        self.duration_ms = duration_ms
        self.rng = np.random.default_rng(scenario.seed)
        self.tasks = scenario.task_specs()
        self.loop = _EventLoop()
        alice = _Host(scenario.cpu.alice_capacity, scenario.cpu.policy)
        bob = _Host(scenario.cpu.bob_capacity, scenario.cpu.policy)
        self.loop.hosts = [alice, bob]
        self.a_front = alice.process("frame_gen")
        self.a_post = alice.process("alice_post")
        self.a_log = alice.process("logging")
        self.b_log = bob.process("logging")
        self.b_sift = bob.process("sifting")
        self.b_ec = bob.process("error_correction", scenario.reconcile.queue)
        self.m = PipelineMetrics()
        self.done = False

        self.drift = scenario.channel.drift.reset_value
        self.drift_time = 0.0
        self.buffer = np.zeros(self._CATS, dtype=np.int64)
        self.buffer_newest = -1
        self.qber_estimate: float | None = None
        self.estimate_frame = -1
        self.last_comp_frame = -1
        self.sent = np.zeros(N_CLASSES, dtype=np.int64)
        self.detected = np.zeros(N_CLASSES, dtype=np.int64)
        self.checked = np.zeros(N_CLASSES, dtype=np.int64)
        self.errors = np.zeros(N_CLASSES, dtype=np.int64)

    # ---- Alice's frame loop
    def start_frame(self, k: int) -> None:
        if (self.n_frames is not None and k >= self.n_frames) or (
            self.duration_ms is not None and self.loop.now >= self.duration_ms
        ):
            self.finish()
            return
        self.loop.submit(self.a_front, self.tasks["frame_gen"].duration(),
                         lambda: self.loop.submit(self.a_front, self.tasks["data_transfer"].duration(),
                                                  lambda: self.hardware_stages(k)))

    def hardware_stages(self, k: int) -> None:
        t = self.tasks
        lead = t["header"].duration() + t["deadtime_d"].duration()
        t_e = t["qubit_tx"].duration()
        self.loop.after(lead + t_e, lambda: self.transmitted(k, t_e))
        self.loop.after(lead + t_e + t["deadtime_f"].duration(), lambda: self.after_f(k))

    def transmitted(self, k: int, t_e: float) -> None:
        sc = self.sc
        self.drift = drift_step(self.drift, sc.channel.drift, (self.loop.now - self.drift_time) / 1e3, self.rng)
        self.drift_time = self.loop.now
        counts = sample_frame_counts(sc.pulse, sc.channel, sc.detectors, sc.clock.frame_qubits, self.rng,
                                     drift_qber=self.drift, clock_rate_hz=sc.clock.clock_rate_hz)
        self.m.transmit_ms += t_e
        self.m.raw_bits += counts.raw_total
        self.pending_raw = counts.raw_total
        self.loop.after(sc.link_delay_ms, lambda: self.bob_receives(k, counts))

    def after_f(self, k: int) -> None:
        g_start = self.loop.now
        self.loop.submit(self.a_log, self.tasks["logging"].duration(), lambda: None)
        self.loop.submit(self.a_post, self.tasks["alice_post"].duration(self.pending_raw),
                         lambda: self.after_g(k, g_start))

    def after_g(self, k: int, g_start: float) -> None:
        self.m.g_ms.append(self.loop.now - g_start)
        self.m.frames = k + 1
        if self.sc.pol_compensation and self.compensation_due():
            self.last_comp_frame = k
            duration = self.tasks["pol_comp"].duration()
            self.m.compensations += 1
            self.m.compensation_ms += duration

            def resume():
                self.drift = self.sc.channel.drift.reset_value
                self.drift_time = self.loop.now
                self.start_frame(k + 1)

            self.loop.after(duration, resume)
        else:
            self.start_frame(k + 1)

    def compensation_due(self) -> bool:
        return (
            self.qber_estimate is not None
            and self.estimate_frame > self.last_comp_frame
            and self.qber_estimate > self.sc.control.qber_threshold
        )

    # ---- Bob
    def bob_receives(self, k: int, counts) -> None:
        self.loop.submit(self.b_log, self.tasks["logging"].duration(), lambda: None)
        self.loop.submit(self.b_sift, self.tasks["sifting"].duration(counts.raw_total),
                         lambda: self.sifted(k, counts))

    def sifted(self, k: int, counts) -> None:
        self.sent += counts.sent
        self.detected += counts.sifted
        self.m.sifted_bits += counts.sifted_total
        self.m.sifted_errors += counts.error_total
        add = np.empty(self._CATS, dtype=np.int64)
        add[0::2] = counts.sifted - counts.errors
        add[1::2] = counts.errors
        self.buffer += add
        self.buffer_newest = k
        size = self.sc.reconcile.block_size
        while self.buffer.sum() >= size:
            block = self.rng.multivariate_hypergeometric(self.buffer, size)
            self.buffer -= block
            newest = self.buffer_newest
            self.loop.submit(self.b_ec, self.tasks["error_correction"].duration(size),
                             lambda block=block, newest=newest: self.corrected(block, newest))

    def corrected(self, block: np.ndarray, newest_frame: int) -> None:
        rc = self.sc.reconcile
        n_err = int(block[1::2].sum())
        qber = n_err / rc.block_size
        if qber <= rc.max_decodable_qber:
            self.m.blocks_ok += 1
            self.m.corrected_bits += rc.block_size
            self.m.corrected_signal_bits += int(block[0] + block[1])
            self.m.leakage_bits += rc.leakage_per_block
            self.checked += block[0::2] + block[1::2]
            self.errors += block[1::2]
            estimate = qber
        else:
            self.m.blocks_failed += 1
            # a decoding failure says the error rate is at least at the code's limit
            estimate = rc.max_decodable_qber
        if newest_frame >= self.estimate_frame:
            self.qber_estimate = estimate
            self.estimate_frame = newest_frame

    # ---- bookkeeping
    def sample(self) -> None:
        if self.done:
            return
        self.record()
        self.loop.after(self.sc.sample_interval_ms, self.sample)

    def record(self) -> None:
        self.m.series.append((
            self.loop.now,
            self.m.frames,
            self.m.raw_bits,
            self.m.sifted_bits,
            self.m.corrected_bits,
            len(self.b_ec.pending) + (self.b_ec.current is not None),
            len(self.b_sift.pending) + (self.b_sift.current is not None),
            self.drift,
            self.m.compensations,
        ))

    def finish(self) -> None:
        self.done = True
        self.m.elapsed_ms = self.loop.now
        self.record()

    def run(self) -> PipelineMetrics:
        self.loop.at(0.0, self.sample)
        self.loop.at(0.0, lambda: self.start_frame(0))
        if self.duration_ms is not None:
            self.loop.at(self.duration_ms, lambda: None if self.done else self.finish())
        self.loop.run(lambda: self.done)
        if not self.done:
            self.finish()
        self.m.tally = DecoyTally(tuple(self.sent), tuple(self.detected), tuple(self.errors), tuple(self.checked))
        self.settle_secret()
        return self.m

    def settle_secret(self) -> None:
        rc = self.sc.reconcile
        try:
            analysis = analyze_tally(self.m.tally, self.sc.pulse, KeyRateParams(rc.f_ec, 0.5), self.sc.y0)
        except InsufficientDataError:
            return
        self.m.analysis = analysis
        self.m.secret_bits = final_key_length(
            self.m.corrected_signal_bits, analysis.estimates, self.m.leakage_bits, rc.s_margin
        )


def run(scenario: Scenario, frames: int | None = None, duration_ms: float | None = None) -> PipelineMetrics:
    """Simulate until ``frames`` frame cycles complete or ``duration_ms`` elapses.

    Frames in flight when the budget is reached are not counted; post-processing
    still queued at that point is left undone, exactly as in a timed run.
    """
    if frames is None and duration_ms is None:
        raise InvalidParameterError("give a frame budget or a duration")
    if frames is not None and frames < 0:
        raise InvalidParameterError("frames must be >= 0")
    if duration_ms is not None and duration_ms < 0:
        raise InvalidParameterError("duration_ms must be >= 0")
    return _Pipeline(scenario, frames, duration_ms).run()


@dataclass(frozen=True)
class SweepPoint:
    mu: float
    raw_kbps: float
    sifted_kbps: float
    corrected_kbps: float
    secret_kbps: float
    duty: float
    qber: float

    @classmethod
    def from_metrics(cls, mu: float, m: PipelineMetrics) -> "SweepPoint":
        return cls(mu, m.raw_rate, m.sifted_rate, m.corrected_rate, m.secret_rate, duty_report(m), m.qber)


SWEEP_COLUMNS = ("mu", "raw_kbps", "sifted_kbps", "corrected_kbps", "secret_kbps", "duty", "qber")


def sweep(scenario: Scenario, mu_values, frames: int | None = None, duration_ms: float | None = None
          ) -> list[SweepPoint]:
    """One run per signal intensity, all with the scenario's seed."""
    mu_values = list(mu_values)
    if not mu_values:
        raise InvalidParameterError("mu_values must be non-empty")
    points = []
    for mu in mu_values:
        m = run(scenario.with_mu(float(mu)), frames=frames, duration_ms=duration_ms)
        points.append(SweepPoint.from_metrics(float(mu), m))
    return points
