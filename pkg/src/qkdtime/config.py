"""Sectioned ``key = value`` configuration files.

A file looks like::

    [source]
    mu = 0.5
    nu1 = 0.1

    [run]
    seed = 7

Every key is optional.  Missing keys take the defaults of whatever object
the file is turned into: :class:`~qkdtime.timecost.Scenario` for
simulations and :class:`~qkdtime.session.SessionConfig` for link sessions.
``KEYS`` lists the accepted sections and keys with their types.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

from .channel import ChannelParams, DetectorParams, DriftParams, PulseConfig
from .errors import ConfigParseError, InvalidParameterError, QkdError, ValidationError
from .framing import ClockConfig, StageDefaults
from .session import SessionConfig
from .timecost import ControlParams, CpuModel, ReconcileParams, Scenario, TaskCosts


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional_float(text: str) -> float | None:
    return None if text.strip().lower() in ("", "none", "bound") else float(text)


def _optional_int(text: str) -> int | None:
    return None if text.strip().lower() in ("", "none") else int(text)


KEYS: dict[str, dict[str, type | callable]] = {
    "source": {"mu": float, "nu1": float, "nu2": float,
               "p_signal": float, "p_decoy1": float, "p_decoy2": float},
    "channel": {"loss_db": float, "receiver_loss_db": float, "y0": float, "e_det": float,
                "drift_sigma": float, "drift_reset": float},
    "detector": {"efficiency": float, "gate_rate_hz": float, "count": int, "dark_prob": float},
    "clock": {"rate_hz": float, "frame_qubits": int},
    "timeline": {"t_a": float, "t_b": float, "t_c": float, "t_d": float, "t_f": float, "t_h": float},
    "control": {"qber_threshold": float, "comp_duration_ms": float, "powermeter_rate_hz": float,
                "pol_compensation": _bool},
    "cpu": {"alice_capacity": float, "bob_capacity": float, "policy": str,
            "alice_post_fixed_ms": float, "alice_post_per_raw_bit_ms": float, "logging_ms": float,
            "sift_per_raw_bit_ms": float, "ec_capacity_kbps": float},
    "ldpc": {"block_size": int, "f_ec": float, "design_qber": float, "max_decodable_qber": float,
             "verify_bits": int, "queue": str, "code_seed": int, "max_iterations": int,
             "max_failed_blocks": _optional_int},
    "pa": {"s_margin": int, "y0": _optional_float, "count_mask_bits": _bool},
    "run": {"seed": int, "frames": _optional_int, "duration_ms": _optional_float,
            "sample_interval_ms": float, "link_delay_ms": float, "session_frames": int},
}


@dataclass
class ConfigFile:
    """Typed values keyed by ``(section, key)``, with the line each came from."""

    values: dict[tuple[str, str], object] = field(default_factory=dict)
    lines: dict[tuple[str, str], int] = field(default_factory=dict)
    path: str | None = None

    def get(self, section: str, key: str, default=None):
        return self.values.get((section, key), default)

    def scenario(self) -> Scenario:
        return self._validated(_build_scenario)

    def session_config(self) -> SessionConfig:
        return self._validated(_build_session)

    @property
    def frames(self) -> int | None:
        return self.get("run", "frames")

    @property
    def duration_ms(self) -> float | None:
        return self.get("run", "duration_ms")

    def _validated(self, build):
        try:
            return build(self.values)
        except (InvalidParameterError, QkdError) as exc:
            raise ValidationError(self._blame(build), str(exc)) from exc

    def _blame(self, build) -> str:
        # the culprit is the last-set key whose removal makes the rest valid
        for key in sorted(self.values, key=lambda k: -self.lines.get(k, 0)):
            trial = {k: v for k, v in self.values.items() if k != key}
            try:
                build(trial)
            except QkdError:
                continue
            return ".".join(key)
        return "config"


def _grab(values, section: str, defaults: dict) -> dict:
    return {name: values.get((section, key), default) for key, (name, default) in defaults.items()}


def _build_parts(values, pulse: PulseConfig, channel: ChannelParams, detectors: DetectorParams,
                 clock: ClockConfig):
    probs = pulse.class_probabilities
    src = _grab(values, "source", {"mu": ("mu", pulse.mu), "nu1": ("nu1", pulse.nu1), "nu2": ("nu2", pulse.nu2),
                                   "p_signal": ("p0", probs[0]), "p_decoy1": ("p1", probs[1]),
                                   "p_decoy2": ("p2", probs[2])})
    pulse = PulseConfig(src["mu"], src["nu1"], src["nu2"], (src["p0"], src["p1"], src["p2"]))
    ch = _grab(values, "channel", {
        "loss_db": ("loss_db", channel.loss_db), "receiver_loss_db": ("receiver_loss_db", channel.receiver_loss_db),
        "y0": ("y0", channel.y0), "e_det": ("e_det", channel.e_det),
        "drift_sigma": ("step_sigma", channel.drift.step_sigma),
        "drift_reset": ("reset_value", channel.drift.reset_value)})
    drift = DriftParams(ch.pop("step_sigma"), ch.pop("reset_value"))
    channel = ChannelParams(drift=drift, **ch)
    det = _grab(values, "detector", {
        "efficiency": ("efficiency", detectors.efficiency), "gate_rate_hz": ("gate_rate_hz", detectors.gate_rate_hz),
        "count": ("detector_count", detectors.detector_count),
        "dark_prob": ("dark_prob_per_gate", detectors.dark_prob_per_gate)})
    detectors = DetectorParams(**det)
    clock = ClockConfig(**_grab(values, "clock", {"rate_hz": ("clock_rate_hz", clock.clock_rate_hz),
                                                  "frame_qubits": ("frame_qubits", clock.frame_qubits)}))
    detectors.gate_stride(clock.clock_rate_hz)
    return pulse, channel, detectors, clock


def _same_name(section: str, obj) -> dict:
    return {k: (k, getattr(obj, k)) for k in KEYS[section] if hasattr(obj, k)}


def _build_scenario(values) -> Scenario:
    base = Scenario()
    pulse, channel, detectors, clock = _build_parts(values, base.pulse, base.channel, base.detectors, base.clock)
    stages = StageDefaults(**_grab(values, "timeline", _same_name("timeline", base.stages)))
    ctl = _grab(values, "control", _same_name("control", base.control))
    control = ControlParams(**ctl)
    cpu = CpuModel(**_grab(values, "cpu", _same_name("cpu", base.cpu)))
    cost_keys = _same_name("cpu", base.costs)
    cost_keys["ec_capacity_kbps"] = ("ec_capacity_kbps", base.costs.ec_capacity_kbps)
    costs = _grab(values, "cpu", cost_keys)
    capacity = costs.pop("ec_capacity_kbps")
    if not capacity > 0:
        raise InvalidParameterError("ec_capacity_kbps must be > 0")
    costs = TaskCosts(ec_per_bit_ms=0.0 if math.isinf(capacity) else 1.0 / capacity, **costs)
    rec = _grab(values, "ldpc", _same_name("ldpc", base.reconcile))
    rec["s_margin"] = values.get(("pa", "s_margin"), base.reconcile.s_margin)
    reconcile = ReconcileParams(**rec)
    run = _grab(values, "run", {"seed": ("seed", base.seed),
                                "sample_interval_ms": ("sample_interval_ms", base.sample_interval_ms),
                                "link_delay_ms": ("link_delay_ms", base.link_delay_ms)})
    frames, duration = values.get(("run", "frames")), values.get(("run", "duration_ms"))
    if frames is not None and frames < 1:
        raise InvalidParameterError("frames must be >= 1")
    if duration is not None and duration <= 0:
        raise InvalidParameterError("duration_ms must be > 0")
    return Scenario(pulse, channel, detectors, clock, stages, control, cpu, costs, reconcile,
                    pol_compensation=values.get(("control", "pol_compensation"), base.pol_compensation),
                    y0=values.get(("pa", "y0"), base.y0), **run)


def _build_session(values) -> SessionConfig:
    base = SessionConfig()
    pulse, channel, detectors, clock = _build_parts(values, base.pulse, base.channel, base.detectors, base.clock)
    ldpc = _grab(values, "ldpc", {"block_size": ("block_size", base.block_size),
                                  "design_qber": ("target_qber", base.target_qber),
                                  "f_ec": ("f_ec", base.f_ec), "code_seed": ("code_seed", base.code_seed),
                                  "max_iterations": ("max_iterations", base.max_iterations),
                                  "max_failed_blocks": ("max_failed_blocks", base.max_failed_blocks)})
    if not 0 < ldpc["target_qber"] < 0.11:
        raise InvalidParameterError("design_qber must lie in (0, 0.11)")
    if ldpc["f_ec"] < 1 or ldpc["max_iterations"] < 1:
        raise InvalidParameterError("f_ec and max_iterations must be >= 1")
    pa = _grab(values, "pa", _same_name("pa", base))
    return replace(base, pulse=pulse, channel=channel, detectors=detectors, clock=clock,
                   n_frames=values.get(("run", "session_frames"), base.n_frames),
                   seed=values.get(("run", "seed"), base.seed), **ldpc, **pa)


def _parser() -> configparser.ConfigParser:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"),
                                       empty_lines_in_values=False)
    parser.optionxform = str.lower
    return parser


def parse_text(text: str, path: str | None = None) -> ConfigFile:
    """Parse config text; raises ConfigParseError (with line) or ValidationError."""
    lines = text.splitlines()
    # continuation lines would silently glue values together; reject them up front
    for i, line in enumerate(lines, 1):
        if line[:1].isspace() and line.strip() and not line.strip().startswith(("#", ";")):
            raise ConfigParseError(f"unexpected indented line {line.strip()!r}", i)
    parser = _parser()
    try:
        parser.read_string(text, source=path or "<config>")
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigParseError("key outside of any [section]", exc.lineno) from exc
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0]
        raise ConfigParseError(f"malformed line {lines[lineno - 1].strip()!r}", lineno) from exc
    except (configparser.DuplicateOptionError, configparser.DuplicateSectionError) as exc:
        raise ConfigParseError(str(exc).split(": ", 1)[-1], exc.lineno) from exc

    where = _locate(lines)
    unknown = []
    for section in parser.sections():
        if section not in KEYS:
            unknown.append(f"[{section}]")
            continue
        unknown.extend(f"{section}.{k}" for k in parser[section] if k not in KEYS[section])
    if unknown:
        raise ValidationError(", ".join(unknown), f"unknown configuration keys: {', '.join(unknown)}")

    cfg = ConfigFile(path=path)
    for section in parser.sections():
        for key, raw in parser[section].items():
            convert = KEYS[section][key]
            try:
                value = convert(raw)
            except ValueError as exc:
                raise ValidationError(f"{section}.{key}",
                                      f"cannot read {raw!r} (line {where.get((section, key))}): {exc}") from exc
            cfg.values[(section, key)] = value
            cfg.lines[(section, key)] = where.get((section, key), 0)
    return cfg


def _locate(lines: list[str]) -> dict[tuple[str, str], int]:
    where, section = {}, None
    for i, line in enumerate(lines, 1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
        elif section and s and s[0] not in "#;":
            for sep in ("=", ":"):
                if sep in s:
                    where[(section, s.split(sep, 1)[0].strip().lower())] = i
                    break
    return where


def load_config(path) -> ConfigFile:
    path = Path(path)
    return parse_text(path.read_text(), str(path))


def parse_config(path) -> Scenario:
    """Read a config file into a simulation :class:`Scenario`."""
    return load_config(path).scenario()
