"""Time-cost model of a decoy-state BB84 link and its classical post-processing.

Modules, in pipeline order:

``channel``   weak coherent pulses, fibre loss, detectors, dark counts
``framing``   quantum frames and the per-frame timeline budget
``sifting``   basis reconciliation and the decoy tally
``ldpc``      syndrome reconciliation with belief propagation
``privacy``   Toeplitz hashing (naive and NTT) and final key length
``decoy``     two-decoy bounds on single-photon yield and error
``timecost``  discrete-event simulation of the whole system's throughput
``link``      wire format of the classical channel
``session``   Alice/Bob state machines and transports
``config``, ``harness``, ``cli``  configuration files, reports and commands
"""

from .channel import ChannelParams, DetectorParams, DriftParams, PulseConfig
from .config import load_config, parse_config
from .decoy import DecoyEstimates, KeyRateParams, analyze_tally, estimates_from_gains, secret_fraction
from .framing import ClockConfig, StageDefaults, TimelineBudget, duty_cycle, timeline
from .ldpc import decode, generate_code, syndrome
from .privacy import ToeplitzSeed, final_key_length, toeplitz_hash, toeplitz_hash_ntt
from .session import SessionConfig, run_loopback
from .sifting import DecoyTally, sift
from .timecost import Scenario, calibration_scenario, four_detector_scenario, run, sweep

__version__ = "0.1.0"

__all__ = [
    "ChannelParams", "DetectorParams", "DriftParams", "PulseConfig",
    "load_config", "parse_config",
    "DecoyEstimates", "KeyRateParams", "analyze_tally", "estimates_from_gains", "secret_fraction",
    "ClockConfig", "StageDefaults", "TimelineBudget", "duty_cycle", "timeline",
    "decode", "generate_code", "syndrome",
    "ToeplitzSeed", "final_key_length", "toeplitz_hash", "toeplitz_hash_ntt",
    "SessionConfig", "run_loopback",
    "DecoyTally", "sift",
    "Scenario", "calibration_scenario", "four_detector_scenario", "run", "sweep",
]
