"""Two-decoy bounds on single-photon yield and error, and the secret fraction.

Intensities are ``mu`` (signal) and ``nu1 > nu2`` (decoys), with
``nu1 + nu2 < mu``.  Bounds are evaluated on point estimates of the gains;
statistical fluctuations of finite tallies are not propagated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import (
    CLASS_NAMES,
    ChannelParams,
    DetectorParams,
    PulseConfig,
    dark_yield,
    expected_error_gain,
    expected_gain,
    overall_transmittance,
)
from .errors import (
    InsufficientDataError,
    InvalidDecoyConfigurationError,
    InvalidParameterError,
    UnboundedErrorSignal,
)
from .sifting import DecoyTally


def binary_entropy(p):
    """H2(p) in bits, with H2(0) = H2(1) = 0."""
    arr = np.asarray(p, dtype=float)
    if np.any((arr < 0) | (arr > 1)) or np.any(np.isnan(arr)):
        raise InvalidParameterError(f"binary entropy needs p in [0, 1], got {p!r}")
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -arr * np.log2(arr) - (1 - arr) * np.log2(1 - arr)
    h = np.where((arr == 0) | (arr == 1), 0.0, h)
    return float(h) if np.ndim(p) == 0 else h


@dataclass(frozen=True)
class KeyRateParams:
    f_ec: float = 1.2
    q_sift: float = 0.5

    def __post_init__(self):
        if self.f_ec < 1:
            raise InvalidParameterError("f_ec must be >= 1")
        if not 0 < self.q_sift <= 1:
            raise InvalidParameterError("q_sift must lie in (0, 1]")


@dataclass(frozen=True)
class DecoyEstimates:
    mu: float
    nu1: float
    nu2: float
    q_mu: float
    q_nu1: float
    q_nu2: float
    e_mu: float
    e_nu1: float
    e_nu2: float
    y0_l: float
    y1_l: float
    e1_u: float

    @property
    def q1_l(self) -> float:
        return self.y1_l * self.mu * math.exp(-self.mu)


def _check_intensities(mu: float, nu1: float, nu2: float) -> None:
    if not (0 <= nu2 < nu1 and nu1 + nu2 < mu):
        raise InvalidDecoyConfigurationError(
            f"need 0 <= nu2 < nu1 and nu1 + nu2 < mu, got mu={mu}, nu1={nu1}, nu2={nu2}"
        )


def y0_lower_bound(eq_nu1: float, eq_nu2: float, nu1: float, nu2: float) -> float:
    """Vacuum-yield bound from the two decoys' error gains ``E*Q``."""
    return max((nu1 * eq_nu2 * math.exp(nu2) - nu2 * eq_nu1 * math.exp(nu1)) / (nu1 - nu2), 0.0)


def y1_lower_bound(q_mu: float, q_nu1: float, q_nu2: float, mu: float, nu1: float, nu2: float, y0: float) -> float:
    _check_intensities(mu, nu1, nu2)
    prefactor = mu / (mu * (nu1 - nu2) - nu1**2 + nu2**2)
    bracket = (
        q_nu1 * math.exp(nu1)
        - q_nu2 * math.exp(nu2)
        - (nu1**2 - nu2**2) / mu**2 * (q_mu * math.exp(mu) - y0)
    )
    return max(prefactor * bracket, 0.0)


def e1_upper_bound(eq_nu1: float, eq_nu2: float, mu: float, nu1: float, nu2: float, y1_l: float) -> float:
    """Upper bound on the single-photon QBER, clamped to [0, 0.5].

    Raises :class:`UnboundedErrorSignal` when ``y1_l`` is zero; the caller
    must then treat the key length as zero.
    """
    _check_intensities(mu, nu1, nu2)
    if y1_l <= 0:
        raise UnboundedErrorSignal("Y1 lower bound is zero; single-photon error is unbounded")
    e1 = (eq_nu1 * math.exp(nu1) - eq_nu2 * math.exp(nu2)) / ((nu1 - nu2) * y1_l)
    return min(max(e1, 0.0), 0.5)


def estimates_from_gains(
    mu: float,
    nu1: float,
    nu2: float,
    q: tuple[float, float, float],
    e: tuple[float, float, float],
    y0: float | None = None,
) -> DecoyEstimates:
    """Chain the bounds.  ``y0=None`` uses the two-decoy vacuum bound."""
    _check_intensities(mu, nu1, nu2)
    q_mu, q_nu1, q_nu2 = (float(v) for v in q)
    e_mu, e_nu1, e_nu2 = (float(v) for v in e)
    eq1, eq2 = e_nu1 * q_nu1, e_nu2 * q_nu2
    y0_l = y0_lower_bound(eq1, eq2, nu1, nu2) if y0 is None else float(y0)
    y1_l = y1_lower_bound(q_mu, q_nu1, q_nu2, mu, nu1, nu2, y0_l)
    try:
        e1_u = e1_upper_bound(eq1, eq2, mu, nu1, nu2, y1_l)
    except UnboundedErrorSignal:
        e1_u = 0.5
    return DecoyEstimates(mu, nu1, nu2, q_mu, q_nu1, q_nu2, e_mu, e_nu1, e_nu2, y0_l, y1_l, e1_u)


def model_estimates(
    pulse: PulseConfig, channel: ChannelParams, detectors: DetectorParams, y0: float | None = None
) -> DecoyEstimates:
    """Bounds evaluated on the exact expected gains of the channel model."""
    x = pulse.intensities
    q = expected_gain(channel, detectors, x)
    eq = expected_error_gain(channel, detectors, x)
    # a class that never clicks (vacuum decoy, no dark counts) has no errors either
    e = np.divide(eq, q, out=np.zeros_like(eq), where=q > 0)
    return estimates_from_gains(pulse.mu, pulse.nu1, pulse.nu2, q, e, y0)


def secret_fraction(est: DecoyEstimates, e_mu: float, q_mu: float, params: KeyRateParams = KeyRateParams()) -> float:
    """Secret bits per pulse: ``q * (-Q_mu f H2(E_mu) + Q1_L (1 - H2(e1_U)))``, floored at 0."""
    if est.y1_l <= 0:
        return 0.0
    r = params.q_sift * (
        -q_mu * params.f_ec * binary_entropy(min(e_mu, 1.0)) + est.q1_l * (1 - binary_entropy(est.e1_u))
    )
    return max(r, 0.0)


@dataclass(frozen=True)
class TallyAnalysis:
    estimates: DecoyEstimates
    rate_per_pulse: float

    def report_rows(self) -> list[tuple[str, float]]:
        est = self.estimates
        return [
            ("q_mu", est.q_mu),
            ("q_nu1", est.q_nu1),
            ("q_nu2", est.q_nu2),
            ("e_mu", est.e_mu),
            ("e_nu1", est.e_nu1),
            ("e_nu2", est.e_nu2),
            ("y0_l", est.y0_l),
            ("y1_l", est.y1_l),
            ("e1_u", est.e1_u),
            ("q1_l", est.q1_l),
            ("secret_fraction", self.rate_per_pulse),
        ]


def analyze_tally(
    tally: DecoyTally,
    pulse: PulseConfig,
    params: KeyRateParams = KeyRateParams(),
    y0: float | None = None,
) -> TallyAnalysis:
    """Empirical gains and QBERs from counts, then the chained bounds.

    Detections in the tally are matched-basis only, so the per-pulse gain is
    recovered as ``detected / (q_sift * sent)``.
    """
    for x, name in enumerate(CLASS_NAMES):
        if tally.sent[x] == 0:
            raise InsufficientDataError(name)
    q = [min(tally.detected[x] / (params.q_sift * tally.sent[x]), 1.0) for x in range(3)]
    e = [tally.errors[x] / tally.checked[x] if tally.checked[x] else 0.0 for x in range(3)]
    est = estimates_from_gains(pulse.mu, pulse.nu1, pulse.nu2, q, e, y0)
    return TallyAnalysis(est, secret_fraction(est, est.e_mu, est.q_mu, params))


def true_single_photon(channel: ChannelParams, detectors: DetectorParams) -> tuple[float, float]:
    """Actual (Y1, e1) of a four-detector receiver under the yield model."""
    y0 = dark_yield(channel, detectors)
    eta = overall_transmittance(channel, detectors)
    y1 = 1 - (1 - y0) * (1 - eta)
    e1 = (channel.e0 * y0 + channel.e_det * (y1 - y0)) / y1
    return y1, e1
