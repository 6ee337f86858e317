"""Weak-coherent-pulse source, lossy fibre and gated detector model.

Detectors are indexed by output port: detector ``d`` sits behind basis
``d // 2`` and reports bit ``d % 2``.  A four-detector receiver has every
port populated; a single detector occupies port 0 only.

Two levels of description live here.  The analytic functions
(:func:`expected_gain`, :func:`expected_error_gain`) give per-pulse
probabilities under the standard yield model
``Q_x = Y0 + (1 - Y0) * (1 - exp(-eta * x))``.  :func:`simulate_frame`
samples individual pulses, photons and dark counts, and
:func:`sample_frame_counts` draws per-frame aggregate counts from the
analytic model for long pipeline runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import InvalidParameterError, UndefinedQberError

N_CLASSES = 3
CLASS_NAMES = ("signal", "decoy1", "decoy2")
DEFAULT_CLASS_PROBABILITIES = (0.875, 0.0625, 0.0625)
N_PORTS = 4


@dataclass(frozen=True)
class PulseConfig:
    """Source intensities (photons/pulse) and how often each class is emitted."""

    mu: float = 0.5
    nu1: float = 0.1
    nu2: float = 0.005
    class_probabilities: tuple[float, float, float] = DEFAULT_CLASS_PROBABILITIES

    def __post_init__(self):
        object.__setattr__(self, "class_probabilities", tuple(float(p) for p in self.class_probabilities))
        if not (0 <= self.nu2 < self.nu1 < self.mu):
            raise InvalidParameterError(
                f"intensities must satisfy 0 <= nu2 < nu1 < mu, got mu={self.mu}, nu1={self.nu1}, nu2={self.nu2}"
            )
        if not self.nu1 + self.nu2 < self.mu:
            raise InvalidParameterError("decoy bounds need nu1 + nu2 < mu")
        probs = self.class_probabilities
        if len(probs) != N_CLASSES or any(not 0 <= p <= 1 for p in probs):
            raise InvalidParameterError(f"class_probabilities must be three values in [0, 1], got {probs}")
        if abs(sum(probs) - 1.0) > 1e-12:
            raise InvalidParameterError(f"class_probabilities must sum to 1, got {sum(probs)!r}")

    @classmethod
    def with_fixed_ratios(cls, mu: float, **kwargs) -> "PulseConfig":
        """Decoys at 0.2*mu and 0.01*mu, as produced by the attenuator/modulator pair."""
        return cls(mu=mu, nu1=0.2 * mu, nu2=0.01 * mu, **kwargs)

    @property
    def intensities(self) -> np.ndarray:
        return np.array([self.mu, self.nu1, self.nu2])


@dataclass(frozen=True)
class DriftParams:
    """Reflected Gaussian random walk on an additive QBER offset.

    ``step_sigma`` is the standard deviation accumulated over one second.
    """

    step_sigma: float = 0.0
    reset_value: float = 0.0

    def __post_init__(self):
        if self.step_sigma < 0:
            raise InvalidParameterError("drift step_sigma must be >= 0")
        if not 0 <= self.reset_value <= 0.5:
            raise InvalidParameterError("drift reset_value must lie in [0, 0.5]")


@dataclass(frozen=True)
class ChannelParams:
    loss_db: float = 6.5
    receiver_loss_db: float = 3.5
    y0: float = 0.0
    e_det: float = 0.01
    drift: DriftParams = field(default_factory=DriftParams)
    e0: float = 0.5

    def __post_init__(self):
        if self.loss_db < 0 or self.receiver_loss_db < 0:
            raise InvalidParameterError("losses must be >= 0 dB")
        if not 0 <= self.y0 < 1:
            raise InvalidParameterError("y0 must lie in [0, 1)")
        if not 0 <= self.e_det < 0.5:
            raise InvalidParameterError("e_det must lie in [0, 0.5)")
        if self.e0 != 0.5:
            raise InvalidParameterError("e0 is fixed at 0.5")

    @property
    def transmittance(self) -> float:
        return transmittance_from_db(self.loss_db) * transmittance_from_db(self.receiver_loss_db)


@dataclass(frozen=True)
class DetectorParams:
    efficiency: float = 0.1
    gate_rate_hz: float = 1e6
    detector_count: int = 4
    dark_prob_per_gate: float = 0.0

    def __post_init__(self):
        if self.detector_count not in (1, 4):
            raise InvalidParameterError("detector_count must be 1 or 4")
        if not 0 <= self.efficiency <= 1:
            raise InvalidParameterError("efficiency must lie in [0, 1]")
        if self.gate_rate_hz <= 0:
            raise InvalidParameterError("gate_rate_hz must be > 0")
        if not 0 <= self.dark_prob_per_gate < 1:
            raise InvalidParameterError("dark_prob_per_gate must lie in [0, 1)")

    @property
    def ports(self) -> tuple[int, ...]:
        return tuple(range(self.detector_count))

    def gate_stride(self, clock_rate_hz: float) -> int:
        """Source pulses per detector gate."""
        if self.gate_rate_hz > clock_rate_hz * (1 + 1e-12):
            raise InvalidParameterError("detector gate rate cannot exceed the source clock rate")
        return max(1, int(round(clock_rate_hz / self.gate_rate_hz)))


class DetectionEvent(NamedTuple):
    pulse_index: int
    detector_id: int
    bob_basis: int
    bob_bit: int
    is_coincidence: bool


@dataclass(frozen=True)
class Detections:
    """Columnar form of a list of :class:`DetectionEvent`, sorted by pulse index."""

    pulse_index: np.ndarray
    detector_id: np.ndarray
    is_coincidence: np.ndarray

    @property
    def bob_basis(self) -> np.ndarray:
        return self.detector_id // 2

    @property
    def bob_bit(self) -> np.ndarray:
        return self.detector_id % 2

    def __len__(self):
        return len(self.pulse_index)

    def events(self) -> list[DetectionEvent]:
        return [
            DetectionEvent(int(p), int(d), int(d) // 2, int(d) % 2, bool(c))
            for p, d, c in zip(self.pulse_index, self.detector_id, self.is_coincidence)
        ]

    @classmethod
    def from_events(cls, events) -> "Detections":
        events = list(events)
        return cls(
            np.array([e.pulse_index for e in events], dtype=np.int64),
            np.array([e.detector_id for e in events], dtype=np.int64),
            np.array([e.is_coincidence for e in events], dtype=bool),
        )


def transmittance_from_db(loss_db: float) -> float:
    if loss_db < 0:
        raise InvalidParameterError(f"loss must be >= 0 dB, got {loss_db}")
    return 10.0 ** (-loss_db / 10.0)


def multi_photon_fraction(mu: float) -> float:
    """Poisson probability of two or more photons in a pulse of mean ``mu``."""
    if mu < 0:
        raise InvalidParameterError(f"mu must be >= 0, got {mu}")
    # -expm1(-mu) - mu*exp(-mu) keeps precision for small mu
    return -math.expm1(-mu) - mu * math.exp(-mu)


def overall_transmittance(channel: ChannelParams, detectors: DetectorParams) -> float:
    """eta: fibre, receiver and detector efficiency combined."""
    return channel.transmittance * detectors.efficiency


def dark_yield(channel: ChannelParams, detectors: DetectorParams) -> float:
    """Probability per gate that at least one installed detector fires without signal."""
    return 1.0 - (1.0 - channel.y0) * (1.0 - detectors.dark_prob_per_gate) ** detectors.detector_count


def _per_detector_dark(channel: ChannelParams, detectors: DetectorParams) -> float:
    return 1.0 - (1.0 - dark_yield(channel, detectors)) ** (1.0 / detectors.detector_count)


def port_shares(alice_basis, alice_bit, error_prob: float, match_bases: bool = False) -> np.ndarray:
    """Fraction of surviving photons routed to each detector port.

    Returns an array of shape ``(..., 4)``.  In the matched basis the correct
    port receives ``(1 - e)/2`` and the wrong one ``e/2``; the other basis
    splits its half evenly.  ``match_bases`` sends every photon into Alice's
    basis (a test hook standing in for a cooperative Bob).
    """
    alice_basis = np.asarray(alice_basis)
    alice_bit = np.asarray(alice_bit)
    shape = np.broadcast(alice_basis, alice_bit).shape
    shares = np.zeros(shape + (N_PORTS,))
    matched = 1.0 if match_bases else 0.5
    other = 0.0 if match_bases else 0.25
    for port in range(N_PORTS):
        basis, bit = divmod(port, 2)
        same_basis = alice_basis == basis
        right = alice_bit == bit
        shares[..., port] = np.where(
            same_basis, np.where(right, matched * (1 - error_prob), matched * error_prob), other
        )
    return shares


def _mean_no_click(eta_x, detectors: DetectorParams, error_prob: float):
    """Average over Alice's four states of exp(-eta*x*S), S = share landing on installed ports."""
    if detectors.detector_count == 4:
        return np.exp(-np.asarray(eta_x, dtype=float))
    states = np.array([(b, v) for b in (0, 1) for v in (0, 1)])
    shares = port_shares(states[:, 0], states[:, 1], error_prob)[:, list(detectors.ports)].sum(axis=1)
    eta_x = np.asarray(eta_x, dtype=float)
    return np.mean(np.exp(-np.multiply.outer(eta_x, shares)), axis=-1)


def expected_gain(channel: ChannelParams, detectors: DetectorParams, intensity, drift_qber: float = 0.0):
    """Overall detection probability per gated pulse of mean photon number ``intensity``."""
    eta = overall_transmittance(channel, detectors)
    y0 = dark_yield(channel, detectors)
    e = _clamp_error(channel.e_det + drift_qber)
    return 1.0 - (1.0 - y0) * _mean_no_click(eta * np.asarray(intensity, dtype=float), detectors, e)


def expected_error_gain(channel: ChannelParams, detectors: DetectorParams, intensity, drift_qber: float = 0.0):
    """``E_x * Q_x = e0*Y0 + e*(1 - exp(-eta*x))``.

    With a partial detector set the signal term uses the probability that a
    photon reaches an installed detector instead of ``1 - exp(-eta*x)``.
    """
    y0 = dark_yield(channel, detectors)
    e = _clamp_error(channel.e_det + drift_qber)
    signal_click = (expected_gain(channel, detectors, intensity, drift_qber) - y0) / (1.0 - y0)
    return channel.e0 * y0 + e * signal_click


def expected_qber(channel: ChannelParams, detectors: DetectorParams, intensity, drift_qber: float = 0.0):
    q = np.asarray(expected_gain(channel, detectors, intensity, drift_qber))
    if np.any(q <= 0):
        raise UndefinedQberError("QBER undefined: expected gain is zero")
    return expected_error_gain(channel, detectors, intensity, drift_qber) / q


def _clamp_error(e: float) -> float:
    return min(max(float(e), 0.0), 0.5)


def drift_step(current: float, drift: DriftParams, dt_s: float, rng: np.random.Generator) -> float:
    """Advance the drift offset by ``dt_s`` seconds, reflecting at 0 and 0.5."""
    if drift.step_sigma == 0 or dt_s <= 0:
        return current
    x = current + rng.normal(0.0, drift.step_sigma * math.sqrt(dt_s))
    # fold into [0, 0.5]
    x = abs(x) % 1.0
    return 1.0 - x if x > 0.5 else x


def simulate_frame_arrays(
    frame,
    channel: ChannelParams,
    detectors: DetectorParams,
    pulse: PulseConfig,
    seed,
    elapsed_drift_qber: float = 0.0,
    clock_rate_hz: float = 1e8,
    match_bases: bool = False,
) -> Detections:
    """Pulse-level Monte Carlo of one quantum frame (see :func:`simulate_frame`)."""
    if not 0 <= elapsed_drift_qber <= 0.5:
        raise InvalidParameterError("drift QBER must lie in [0, 0.5]")
    rng = np.random.default_rng(seed)
    stride = detectors.gate_stride(clock_rate_hz)
    gated = np.arange(0, len(frame), stride, dtype=np.int64)
    empty = Detections(np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0, bool))
    if gated.size == 0:
        return empty

    bases = frame.bases[gated]
    bits = frame.bits[gated]
    mean_photons = pulse.intensities[frame.classes[gated]]
    e = _clamp_error(channel.e_det + elapsed_drift_qber)
    eta = overall_transmittance(channel, detectors)

    emitted = rng.poisson(mean_photons)
    survived = rng.binomial(emitted, eta)
    hit = np.flatnonzero(survived)
    photon_pulse = np.repeat(hit, survived[hit])
    shares = port_shares(bases[photon_pulse], bits[photon_pulse], e, match_bases)
    u = rng.random(len(photon_pulse))
    photon_port = (u[:, None] > np.cumsum(shares, axis=1)).sum(axis=1)
    photon_port = np.minimum(photon_port, N_PORTS - 1)

    clicks = np.zeros((gated.size, N_PORTS), dtype=bool)
    clicks[photon_pulse, photon_port] = True
    p_dark = _per_detector_dark(channel, detectors)
    if p_dark > 0:
        clicks[:, : detectors.detector_count] |= rng.random((gated.size, detectors.detector_count)) < p_dark
    clicks[:, detectors.detector_count:] = False

    n_clicks = clicks.sum(axis=1)
    rows, ports = np.nonzero(clicks)
    if rows.size == 0:
        return empty
    return Detections(gated[rows], ports.astype(np.int64), n_clicks[rows] > 1)


def simulate_frame(
    frame,
    channel: ChannelParams,
    detectors: DetectorParams,
    pulse: PulseConfig,
    seed,
    elapsed_drift_qber: float = 0.0,
    clock_rate_hz: float = 1e8,
    match_bases: bool = False,
) -> list[DetectionEvent]:
    """Detection events for one frame, deterministic given ``seed``.

    Each gated pulse draws a Poisson photon number at its class intensity,
    thins it by eta, and routes survivors to ports via :func:`port_shares`
    with bit-error probability ``clamp(e_det + drift, 0, 0.5)``.  Dark counts
    fire independently per installed detector.  When the detectors are gated
    slower than the source, only every ``clock/gate``-th pulse is observed.
    Gates where more than one detector fires are flagged as coincidences.
    """
    return simulate_frame_arrays(
        frame, channel, detectors, pulse, seed, elapsed_drift_qber, clock_rate_hz, match_bases
    ).events()


def coincidence_probability(channel: ChannelParams, detectors: DetectorParams, intensity: float,
                            drift_qber: float = 0.0) -> float:
    """Closed-form probability that two or more installed detectors fire in one gate.

    Ports receive independent Poisson photon counts, so per Alice state the
    click indicators are independent Bernoulli variables.
    """
    eta = overall_transmittance(channel, detectors)
    e = _clamp_error(channel.e_det + drift_qber)
    p_dark = _per_detector_dark(channel, detectors)
    total = 0.0
    for basis in (0, 1):
        for bit in (0, 1):
            shares = port_shares(basis, bit, e)[list(detectors.ports)]
            p = 1.0 - (1.0 - p_dark) * np.exp(-eta * intensity * shares)
            none = np.prod(1 - p)
            one = sum(p[i] * np.prod(np.delete(1 - p, i)) for i in range(len(p)))
            total += 0.25 * (1.0 - none - one)
    return float(total)


@dataclass(frozen=True)
class FrameCounts:
    """Per-class aggregate outcome of one frame (indexed signal, decoy1, decoy2)."""

    sent: np.ndarray
    raw: np.ndarray
    sifted: np.ndarray
    errors: np.ndarray

    @property
    def raw_total(self) -> int:
        return int(self.raw.sum())

    @property
    def sifted_total(self) -> int:
        return int(self.sifted.sum())

    @property
    def error_total(self) -> int:
        return int(self.errors.sum())


def sample_frame_counts(
    pulse: PulseConfig,
    channel: ChannelParams,
    detectors: DetectorParams,
    frame_qubits: int,
    rng: np.random.Generator,
    drift_qber: float = 0.0,
    clock_rate_hz: float = 1e8,
    sift_probability: float = 0.5,
) -> FrameCounts:
    """Draw one frame's gated/raw/sifted/error counts from the analytic model.

    Exact in distribution with respect to :func:`expected_gain` and
    :func:`expected_qber`; used where pulse-level simulation of ``10^7``
    qubits per frame would be too slow.
    """
    stride = detectors.gate_stride(clock_rate_hz)
    n_gated = -(-frame_qubits // stride)
    sent = rng.multinomial(n_gated, pulse.class_probabilities)
    gains = np.clip(expected_gain(channel, detectors, pulse.intensities, drift_qber), 0.0, 1.0)
    raw = rng.binomial(sent, gains)
    sifted = rng.binomial(raw, sift_probability)
    qber = np.where(
        gains > 0,
        expected_error_gain(channel, detectors, pulse.intensities, drift_qber) / np.where(gains > 0, gains, 1),
        0.0,
    )
    errors = rng.binomial(sifted, np.clip(qber, 0.0, 0.5))
    return FrameCounts(sent, raw, sifted, errors)
