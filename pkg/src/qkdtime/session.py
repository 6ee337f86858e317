"""Alice and Bob session state machines over the classical link.

:func:`session_step` is a pure transition ``(state, event) -> (state,
outbound messages)``.  Events are inbound :mod:`~qkdtime.link` messages or
the local events :class:`Start` (Alice begins) and :class:`PhotonsArrived`
(Bob's detectors have seen a frame).

One session runs ``n_frames`` frames.  Per frame::

    Alice                               Bob
    FRAME_ANNOUNCE  ------------------>       (photons arrive)
                    <------------------ DETECTION_REPORT
    SIFT_MASK, CLASS_ANNOUNCE  ------->
    while both buffers hold a full block:
                    <------------------ SYNDROME_REQUEST
    SYNDROME        ------------------>       (decode)
                    <------------------ VERIFY (Bob's digest)
    VERIFY (Alice's digest)  --------->

After the last frame Bob runs the decoy analysis, fixes the final key
length and sends PA_SEED followed by KEY_CONFIRM; Alice answers with her
own KEY_CONFIRM.  A block is kept only when both digests agree.

The quantum channel is emulated: Bob regenerates the transmitted frame
from the session seed and samples his detections from it.  Only the
detection outcomes enter his state.
"""

from __future__ import annotations

import copy
import functools
import socket
import time
from dataclasses import dataclass, field

import numpy as np

from .channel import N_CLASSES, ChannelParams, DetectorParams, PulseConfig, simulate_frame_arrays
from .decoy import KeyRateParams, analyze_tally
from .errors import (
    DecodeBudgetExceeded,
    InsufficientDataError,
    InvalidParameterError,
    ProtocolError,
    ProtocolViolationError,
)
from .framing import ClockConfig, build_frame
from .ldpc import LdpcCode, decode, generate_code, syndrome
from .link import (
    ClassAnnounce,
    DetectionReportMessage,
    FrameAnnounce,
    KeyConfirm,
    Message,
    MessageReader,
    PaSeed,
    SiftMask,
    SyndromeMessage,
    SyndromeRequest,
    Verify,
    digest64,
    encode,
)
from .link import decode as decode_message
from .privacy import SecretKey, ToeplitzSeed, final_key_length, toeplitz_hash_ntt
from .sifting import DecoyTally, DetectionReport, collapse_coincidences, keep_mask_for, report_from_detections

ALICE_PHASES = ("idle", "awaiting_report", "reconciling", "verifying", "amplifying", "confirming", "done")
BOB_PHASES = ("idle", "collecting", "awaiting_mask", "awaiting_classes", "reconciling", "verifying",
              "amplifying", "done")
DIGEST_BITS = 64


@dataclass(frozen=True)
class SessionConfig:
    pulse: PulseConfig = field(default_factory=PulseConfig)
    channel: ChannelParams = field(default_factory=lambda: ChannelParams(loss_db=3.0, receiver_loss_db=0.0,
                                                                          e_det=0.035))
    detectors: DetectorParams = field(default_factory=lambda: DetectorParams(efficiency=0.5, gate_rate_hz=1e8))
    clock: ClockConfig = field(default_factory=lambda: ClockConfig(1e8, 100_000))
    n_frames: int = 8
    block_size: int = 10_000
    target_qber: float = 0.035
    f_ec: float = 1.2
    code_seed: int = 0
    max_iterations: int = 100
    max_failed_blocks: int | None = None
    s_margin: int = 0
    y0: float | None = None
    count_mask_bits: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.n_frames < 1:
            raise InvalidParameterError("n_frames must be >= 1")
        if self.block_size < 6:
            raise InvalidParameterError("block_size must be >= 6")
        if self.max_failed_blocks is not None and self.max_failed_blocks < 0:
            raise InvalidParameterError("max_failed_blocks must be >= 0")

    @property
    def digest_key(self) -> int:
        """Public evaluation point of the verification hash, fixed per session."""
        return int(np.random.default_rng([self.seed, 0x5EED]).integers(2, 1 << 61))

    def frame_seed(self, k: int) -> list[int]:
        return [self.seed, k, 0]

    def channel_seed(self, k: int) -> list[int]:
        return [self.seed, k, 1]

    def collapse_seed(self, k: int) -> list[int]:
        return [self.seed, k, 2]

    def pa_seed(self) -> list[int]:
        return [self.seed, 0xA3]


@functools.lru_cache(maxsize=8)
def _code(n: int, target_qber: float, f: float, seed: int) -> LdpcCode:
    return generate_code(n, target_qber, f, seed)


@dataclass(frozen=True)
class Start:
    """Local event: Alice opens the session."""


@dataclass(frozen=True)
class PhotonsArrived:
    """Local event: the quantum part of ``frame_number`` reached Bob."""

    frame_number: int


@dataclass
class SessionState:
    role: str
    config: SessionConfig
    phase: str = "idle"
    frame: int = 0
    frames_done: int = 0
    next_block: int = 0
    blocks_ok: int = 0
    blocks_failed: int = 0
    disclosed_bits: int = 0
    buf_bits: np.ndarray = field(default_factory=lambda: np.empty(0, np.uint8))
    buf_classes: np.ndarray = field(default_factory=lambda: np.empty(0, np.uint8))
    block_bits: np.ndarray | None = None
    block_classes: np.ndarray | None = None
    block_flips: np.ndarray | None = None
    block_digest: int | None = None
    key_input: list = field(default_factory=list)
    # Bob only: bits and bases of the current frame's report, tally counters
    report_bits: np.ndarray | None = None
    kept_bits: np.ndarray | None = None
    sent: np.ndarray = field(default_factory=lambda: np.zeros(N_CLASSES, np.int64))
    detected: np.ndarray = field(default_factory=lambda: np.zeros(N_CLASSES, np.int64))
    checked: np.ndarray = field(default_factory=lambda: np.zeros(N_CLASSES, np.int64))
    errors: np.ndarray = field(default_factory=lambda: np.zeros(N_CLASSES, np.int64))
    key: SecretKey | None = None
    key_digest: int | None = None
    confirmed: bool | None = None

    @property
    def code(self) -> LdpcCode:
        c = self.config
        return _code(c.block_size, c.target_qber, c.f_ec, c.code_seed)

    @property
    def tally(self) -> DecoyTally:
        return DecoyTally(tuple(self.sent), tuple(self.detected), tuple(self.errors), tuple(self.checked))


def new_session(role: str, config: SessionConfig) -> SessionState:
    if role not in ("alice", "bob"):
        raise InvalidParameterError("role must be 'alice' or 'bob'")
    return SessionState(role, config)


def _violation(state: SessionState, event, expected: str):
    name = type(event).__name__
    raise ProtocolViolationError(f"{state.role} cannot handle {name} in phase {state.phase!r}", expected)


def session_step(state: SessionState, event) -> tuple[SessionState, list[Message]]:
    """Apply one event to a copy of ``state``; the input state is never modified."""
    s = copy.deepcopy(state, {id(state.config): state.config})
    out: list[Message] = []
    if s.role == "alice":
        _alice(s, event, out)
    else:
        _bob(s, event, out)
    return s, out


# --------------------------------------------------------------------------
# Alice


def _alice_frame(s: SessionState):
    c = s.config
    return build_frame(s.frame, c.clock, c.pulse, c.frame_seed(s.frame))


def _alice(s: SessionState, ev, out: list) -> None:
    c = s.config
    if s.phase == "idle":
        if not isinstance(ev, Start):
            _violation(s, ev, "idle")
        s.phase = "awaiting_report"
        out.append(FrameAnnounce(s.frame, c.clock.frame_qubits))
    elif s.phase == "awaiting_report":
        if not isinstance(ev, DetectionReportMessage) or ev.frame_number != s.frame:
            _violation(s, ev, "awaiting_report")
        frame = _alice_frame(s)
        report = DetectionReport(ev.frame_number, ev.pulse_index, ev.bob_basis)
        keep = keep_mask_for(frame, report)
        idx = report.pulse_index[keep]
        stride = c.detectors.gate_stride(c.clock.clock_rate_hz)
        sent = np.bincount(frame.classes[::stride], minlength=N_CLASSES)
        classes = frame.classes[idx].astype(np.uint8)
        out.append(SiftMask(s.frame, keep.astype(np.uint8)))
        out.append(ClassAnnounce(s.frame, tuple(int(x) for x in sent), classes))
        if c.count_mask_bits:
            s.disclosed_bits += len(keep)
        s.buf_bits = np.concatenate([s.buf_bits, frame.bits[idx].astype(np.uint8)])
        s.buf_classes = np.concatenate([s.buf_classes, classes])
        s.frames_done += 1
        _alice_next(s, out)
    elif s.phase == "reconciling":
        if not isinstance(ev, SyndromeRequest) or ev.block_id != s.next_block:
            _violation(s, ev, "reconciling")
        n = c.block_size
        s.block_bits, s.buf_bits = s.buf_bits[:n], s.buf_bits[n:]
        s.block_classes, s.buf_classes = s.buf_classes[:n], s.buf_classes[n:]
        syn = syndrome(s.code, s.block_bits, ev.block_id)
        out.append(SyndromeMessage(ev.block_id, syn.code_id, syn.bits))
        s.disclosed_bits += len(syn)
        s.phase = "verifying"
    elif s.phase == "verifying":
        if not isinstance(ev, Verify) or ev.block_id != s.next_block:
            _violation(s, ev, "verifying")
        mine = digest64(s.block_bits, c.digest_key)
        out.append(Verify(ev.block_id, mine))
        s.disclosed_bits += 2 * DIGEST_BITS
        if mine == ev.digest:
            s.blocks_ok += 1
            s.key_input.append(s.block_bits[s.block_classes == 0])
        else:
            s.blocks_failed += 1
        s.block_bits = s.block_classes = None
        s.next_block += 1
        _alice_next(s, out)
    elif s.phase == "amplifying":
        if not isinstance(ev, PaSeed):
            _violation(s, ev, "amplifying")
        key_input = _joined(s.key_input)
        if ev.n_in != len(key_input):
            raise ProtocolError(f"PA seed expects {ev.n_in} input bits, Alice holds {len(key_input)}")
        seed = ToeplitzSeed(ev.bits, ev.n_in, ev.n_out)
        s.key = SecretKey(toeplitz_hash_ntt(seed, key_input), _provenance(s))
        s.key_digest = digest64(s.key.bits, c.digest_key)
        out.append(KeyConfirm(s.key_digest))
        s.phase = "confirming"
    elif s.phase == "confirming":
        if not isinstance(ev, KeyConfirm):
            _violation(s, ev, "confirming")
        s.confirmed = ev.digest == s.key_digest
        s.phase = "done"
    else:
        _violation(s, ev, s.phase)


def _alice_next(s: SessionState, out: list) -> None:
    c = s.config
    if len(s.buf_bits) >= c.block_size:
        s.phase = "reconciling"
    elif s.frames_done < c.n_frames:
        s.frame += 1
        s.phase = "awaiting_report"
        out.append(FrameAnnounce(s.frame, c.clock.frame_qubits))
    else:
        s.phase = "amplifying"


# --------------------------------------------------------------------------
# Bob


def _bob(s: SessionState, ev, out: list) -> None:
    c = s.config
    if s.phase == "idle":
        if not isinstance(ev, FrameAnnounce) or ev.frame_number != s.frame:
            _violation(s, ev, "idle")
        if ev.qubit_count != c.clock.frame_qubits:
            raise ProtocolError(f"frame of {ev.qubit_count} qubits, configured {c.clock.frame_qubits}")
        s.phase = "collecting"
    elif s.phase == "collecting":
        if not isinstance(ev, PhotonsArrived) or ev.frame_number != s.frame:
            _violation(s, ev, "collecting")
        sent = build_frame(s.frame, c.clock, c.pulse, c.frame_seed(s.frame))
        det = simulate_frame_arrays(sent, c.channel, c.detectors, c.pulse, c.channel_seed(s.frame),
                                    clock_rate_hz=c.clock.clock_rate_hz)
        det = collapse_coincidences(det, c.collapse_seed(s.frame))
        report, bits = report_from_detections(s.frame, det)
        s.report_bits = bits
        out.append(DetectionReportMessage(s.frame, report.pulse_index, report.bob_basis))
        s.phase = "awaiting_mask"
    elif s.phase == "awaiting_mask":
        if not isinstance(ev, SiftMask) or ev.frame_number != s.frame:
            _violation(s, ev, "awaiting_mask")
        if len(ev.keep) != len(s.report_bits):
            raise ProtocolError("sift mask length does not match the detection report")
        s.kept_bits = s.report_bits[ev.keep.astype(bool)]
        if c.count_mask_bits:
            s.disclosed_bits += len(ev.keep)
        s.report_bits = None
        s.phase = "awaiting_classes"
    elif s.phase == "awaiting_classes":
        if not isinstance(ev, ClassAnnounce) or ev.frame_number != s.frame:
            _violation(s, ev, "awaiting_classes")
        if len(ev.classes) != len(s.kept_bits):
            raise ProtocolError("class announcement does not match the kept detections")
        if len(ev.classes) and ev.classes.max() >= N_CLASSES:
            raise ProtocolError("unknown intensity class in announcement")
        s.sent += np.asarray(ev.sent, dtype=np.int64)
        s.detected += np.bincount(ev.classes, minlength=N_CLASSES)
        s.buf_bits = np.concatenate([s.buf_bits, s.kept_bits])
        s.buf_classes = np.concatenate([s.buf_classes, ev.classes])
        s.kept_bits = None
        s.frames_done += 1
        _bob_next(s, out)
    elif s.phase == "reconciling":
        if not isinstance(ev, SyndromeMessage) or ev.block_id != s.next_block:
            _violation(s, ev, "reconciling")
        code = s.code
        if ev.code_id != code.code_id or len(ev.bits) != code.m:
            raise ProtocolError("syndrome does not belong to the session's code")
        n = c.block_size
        noisy, s.buf_bits = s.buf_bits[:n], s.buf_bits[n:]
        s.block_classes, s.buf_classes = s.buf_classes[:n], s.buf_classes[n:]
        s.disclosed_bits += len(ev.bits)
        res = decode(code, noisy, ev.bits, c.target_qber, c.max_iterations)
        s.block_bits = res.corrected_bits if res.success else noisy
        s.block_flips = res.flipped_positions
        s.block_digest = digest64(s.block_bits, c.digest_key)
        out.append(Verify(ev.block_id, s.block_digest))
        s.phase = "verifying"
    elif s.phase == "verifying":
        if not isinstance(ev, Verify) or ev.block_id != s.next_block:
            _violation(s, ev, "verifying")
        s.disclosed_bits += 2 * DIGEST_BITS
        if ev.digest == s.block_digest:
            s.blocks_ok += 1
            s.key_input.append(s.block_bits[s.block_classes == 0])
            s.checked += np.bincount(s.block_classes, minlength=N_CLASSES)
            s.errors += np.bincount(s.block_classes[s.block_flips], minlength=N_CLASSES)
        else:
            s.blocks_failed += 1
            if c.max_failed_blocks is not None and s.blocks_failed > c.max_failed_blocks:
                raise DecodeBudgetExceeded(
                    f"{s.blocks_failed} blocks failed reconciliation (budget {c.max_failed_blocks})"
                )
        s.block_bits = s.block_classes = s.block_flips = None
        s.block_digest = None
        s.next_block += 1
        _bob_next(s, out)
    elif s.phase == "amplifying":
        if not isinstance(ev, KeyConfirm):
            _violation(s, ev, "amplifying")
        s.confirmed = ev.digest == s.key_digest
        s.phase = "done"
    else:
        _violation(s, ev, s.phase)


def _bob_next(s: SessionState, out: list) -> None:
    c = s.config
    if len(s.buf_bits) >= c.block_size:
        out.append(SyndromeRequest(s.next_block))
        s.phase = "reconciling"
    elif s.frames_done < c.n_frames:
        s.frame += 1
        s.phase = "idle"
    else:
        _bob_amplify(s, out)


def _bob_amplify(s: SessionState, out: list) -> None:
    c = s.config
    key_input = _joined(s.key_input)
    n_out = 0
    if s.blocks_ok:
        try:
            analysis = analyze_tally(s.tally, c.pulse, KeyRateParams(c.f_ec, 0.5), c.y0)
        except InsufficientDataError:
            analysis = None
        if analysis is not None:
            n_out = final_key_length(len(key_input), analysis.estimates, s.disclosed_bits, c.s_margin)
    n_out = min(n_out, len(key_input))
    seed = ToeplitzSeed.random(len(key_input), n_out, np.random.default_rng(c.pa_seed()))
    s.key = SecretKey(toeplitz_hash_ntt(seed, key_input), _provenance(s))
    s.key_digest = digest64(s.key.bits, c.digest_key)
    out.append(PaSeed(seed.n_in, seed.n_out, seed.bits))
    out.append(KeyConfirm(s.key_digest))
    s.phase = "amplifying"


def _joined(parts) -> np.ndarray:
    return np.concatenate(parts).astype(np.uint8) if parts else np.empty(0, np.uint8)


def _provenance(s: SessionState) -> dict:
    return {"blocks": s.blocks_ok, "failed_blocks": s.blocks_failed, "disclosed_bits": s.disclosed_bits}


# --------------------------------------------------------------------------
# transports


@dataclass
class SessionResult:
    alice: SessionState
    bob: SessionState
    transcript: list[tuple[str, bytes]]


def _bob_feed(bob: SessionState, msg) -> tuple[SessionState, list[Message]]:
    bob, out = session_step(bob, msg)
    if bob.phase == "collecting":
        bob, more = session_step(bob, PhotonsArrived(bob.frame))
        out = out + more
    return bob, out


def run_loopback(config: SessionConfig) -> SessionResult:
    """Run both roles in-process; every message goes through the byte codec."""
    alice, bob = new_session("alice", config), new_session("bob", config)
    transcript: list[tuple[str, bytes]] = []
    to_bob, to_alice = [], []
    alice, out = session_step(alice, Start())
    to_bob.extend(out)
    while to_bob or to_alice:
        if to_bob:
            raw = encode(to_bob.pop(0))
            transcript.append(("a->b", raw))
            bob, out = _bob_feed(bob, decode_message(raw))
            to_alice.extend(out)
        else:
            raw = encode(to_alice.pop(0))
            transcript.append(("b->a", raw))
            alice, out = session_step(alice, decode_message(raw))
            to_bob.extend(out)
    if alice.phase != "done" or bob.phase != "done":
        raise ProtocolError(f"session stalled: alice {alice.phase!r}, bob {bob.phase!r}")
    return SessionResult(alice, bob, transcript)


def replay(transcript, config: SessionConfig) -> tuple[SessionState, SessionState]:
    """Drive both state machines from a recorded transcript only."""
    alice, _ = session_step(new_session("alice", config), Start())
    bob = new_session("bob", config)
    for direction, raw in transcript:
        if direction == "a->b":
            bob, _ = _bob_feed(bob, decode_message(raw))
        else:
            alice, _ = session_step(alice, decode_message(raw))
    return alice, bob


def run_socket(role: str, config: SessionConfig, sock: socket.socket) -> SessionState:
    """Run one role over a connected stream socket until the session is done."""
    state = new_session(role, config)
    reader = MessageReader()
    if role == "alice":
        state, out = session_step(state, Start())
        sock.sendall(b"".join(encode(m) for m in out))
    while state.phase != "done":
        data = sock.recv(1 << 16)
        if not data:
            raise ProtocolError(f"peer closed the connection while {role} was in phase {state.phase!r}")
        for msg in reader.feed(data):
            if role == "bob":
                state, out = _bob_feed(state, msg)
            else:
                state, out = session_step(state, msg)
            if out:
                sock.sendall(b"".join(encode(m) for m in out))
    return state


def serve_once(role: str, config: SessionConfig, host: str, port: int, ready=None) -> SessionState:
    """Listen on ``host:port``, accept one peer and run the session."""
    with socket.create_server((host, port)) as server:
        if ready is not None:
            ready(server.getsockname()[1])
        conn, _ = server.accept()
        with conn:
            return run_socket(role, config, conn)


def connect_once(role: str, config: SessionConfig, host: str, port: int, timeout: float = 30.0) -> SessionState:
    """Connect to a listening peer, retrying refused connections for up to ``timeout`` seconds."""
    deadline = time.monotonic() + timeout
    while True:
        try:
            conn = socket.create_connection((host, port), timeout=max(deadline - time.monotonic(), 0.1))
            break
        except ConnectionRefusedError:
            if time.monotonic() >= deadline:
                raise
            time.sleep(0.05)
    with conn:
        conn.settimeout(None)
        return run_socket(role, config, conn)
