"""Command line: ``qkdtime simulate | sweep | analyze | netrun``.

Exit codes: 0 success, 1 usage, 2 validation (bad config, bad tally,
insufficient data), 3 protocol error on the classical link, 4 too many
failed reconciliation blocks.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .config import ConfigFile, load_config
from .errors import (
    ConfigParseError,
    DecodeBudgetExceeded,
    InsufficientDataError,
    InvalidParameterError,
    ProtocolError,
    ProtocolViolationError,
    ValidationError,
)
from .harness import analysis_csv, analyze, metrics_csv, simulate, sweep_csv
from .session import connect_once, serve_once
from .sifting import DecoyTally
from .timecost import sweep

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_PROTOCOL, EXIT_DECODE = 0, 1, 2, 3, 4
DEFAULT_FRAMES = 100


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _endpoint(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise argparse.ArgumentTypeError(f"expected HOST:PORT, got {text!r}")
    return host or "127.0.0.1", int(port)


def _mu_list(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.replace(",", " ").split()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc
    if not values:
        raise argparse.ArgumentTypeError("empty mu list")
    return values


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="qkdtime", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def budget(sp):
        g = sp.add_mutually_exclusive_group()
        g.add_argument("--frames", type=int, help=f"frame cycles to simulate (default {DEFAULT_FRAMES})")
        g.add_argument("--duration", type=float, metavar="MS", help="simulated time in ms")

    s = sub.add_parser("simulate", help="run the pipeline simulation once")
    s.add_argument("--config", type=Path)
    s.add_argument("--seed", type=int)
    budget(s)
    s.add_argument("--out", type=Path, help="metrics CSV (default: stdout)")
    s.add_argument("--report", type=Path, help="run report CSV (default: stderr)")
    s.add_argument("--tally", type=Path, help="also write the decoy tally CSV")

    w = sub.add_parser("sweep", help="simulate over a list of signal intensities")
    w.add_argument("--config", type=Path)
    w.add_argument("--seed", type=int)
    w.add_argument("--mu-list", type=_mu_list, required=True, help="comma separated intensities")
    budget(w)
    w.add_argument("--out", type=Path, help="sweep CSV (default: stdout)")

    a = sub.add_parser("analyze", help="decoy-state analysis of a tally CSV")
    a.add_argument("--tally", type=Path, required=True)
    a.add_argument("--config", type=Path, help="intensities and f_ec of the run that produced the tally")
    a.add_argument("--out", type=Path, help="report CSV (default: stdout)")

    n = sub.add_parser("netrun", help="run one side of a key session over TCP")
    n.add_argument("--role", choices=("alice", "bob"), required=True)
    g = n.add_mutually_exclusive_group(required=True)
    g.add_argument("--listen", type=_endpoint, metavar="HOST:PORT")
    g.add_argument("--connect", type=_endpoint, metavar="HOST:PORT")
    n.add_argument("--config", type=Path)
    n.add_argument("--seed", type=int)
    n.add_argument("--out-dir", type=Path, default=Path("."))
    n.add_argument("--timeout", type=float, default=30.0, help="connect timeout in seconds")
    return p


def _config(path: Path | None) -> ConfigFile:
    if path is None:
        return ConfigFile()
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    return load_config(path)


def _emit(text: str, path: Path | None, stream) -> None:
    if path is None:
        stream.write(text)
    else:
        path.write_text(text)


def _budget(args, cfg: ConfigFile) -> tuple[int | None, float | None]:
    if args.frames is not None or args.duration is not None:
        if (args.frames is not None and args.frames < 1) or (args.duration is not None and args.duration <= 0):
            raise ValidationError("frames" if args.frames is not None else "duration", "must be positive")
        return args.frames, args.duration
    if cfg.frames is not None or cfg.duration_ms is not None:
        return cfg.frames, cfg.duration_ms
    return DEFAULT_FRAMES, None


def _scenario(args):
    cfg = _config(args.config)
    sc = cfg.scenario()
    if args.seed is not None:
        sc = replace(sc, seed=args.seed)
    return cfg, sc


def cmd_simulate(args) -> int:
    cfg, sc = _scenario(args)
    frames, duration = _budget(args, cfg)
    report = simulate(sc, frames, duration)
    _emit(metrics_csv(report.metrics), args.out, sys.stdout)
    _emit(report.to_csv(), args.report, sys.stderr)
    if args.tally is not None:
        args.tally.write_text(report.metrics.tally.to_csv())
    print(f"simulated {report.metrics.frames} frames in {report.runtime_s:.2f} s", file=sys.stderr)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg, sc = _scenario(args)
    frames, duration = _budget(args, cfg)
    for mu in args.mu_list:
        sc.with_mu(mu)  # validate every point before running any
    _emit(sweep_csv(sweep(sc, args.mu_list, frames, duration)), args.out, sys.stdout)
    return EXIT_OK


def cmd_analyze(args) -> int:
    sc = _config(args.config).scenario()
    if not args.tally.is_file():
        raise UsageError(f"tally file not found: {args.tally}")
    tally = DecoyTally.from_csv(args.tally.read_text())
    _emit(analysis_csv(analyze(tally, sc)), args.out, sys.stdout)
    return EXIT_OK


def cmd_netrun(args) -> int:
    config = _config(args.config).session_config()
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if args.listen is not None:
        host, port = args.listen
        state = serve_once(args.role, config, host, port)
    else:
        host, port = args.connect
        state = connect_once(args.role, config, host, port, timeout=args.timeout)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    bits = "".join(map(str, state.key.bits.tolist()))
    (args.out_dir / f"{args.role}.key").write_text(bits + "\n")
    digest = f"{state.key_digest:016x}"
    (args.out_dir / f"{args.role}.digest").write_text(digest + "\n")
    print(f"{args.role}: {state.key.length} key bits, digest {digest}, "
          f"{state.disclosed_bits} bits disclosed, confirmed={state.confirmed}")
    if not state.confirmed:
        print("key confirmation failed: the two sides hold different keys", file=sys.stderr)
        return EXIT_PROTOCOL
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "sweep": cmd_sweep, "analyze": cmd_analyze, "netrun": cmd_netrun}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"qkdtime: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InsufficientDataError as exc:
        print(f"qkdtime: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ConfigParseError, ValidationError, InvalidParameterError) as exc:
        print(f"qkdtime: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ProtocolError, ProtocolViolationError, ConnectionError) as exc:
        print(f"qkdtime: protocol error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except DecodeBudgetExceeded as exc:
        print(f"qkdtime: {exc}", file=sys.stderr)
        return EXIT_DECODE


if __name__ == "__main__":
    sys.exit(main())
