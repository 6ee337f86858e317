"""Run reports and the CSV files the command line writes.

CSV schemas (header row first, one record per line, ``\\n`` line ends):

``metrics``  ``row`` + :data:`~qkdtime.timecost.SERIES_COLUMNS`.  ``row`` is
             ``sample`` for each sampling interval and ``summary`` for the
             final totals of the run.
``report``   ``key,value`` pairs of a :class:`RunReport`.
``sweep``    :data:`~qkdtime.timecost.SWEEP_COLUMNS`.
``analysis`` ``quantity,value`` pairs from a tally analysis.

Floats are written with ``repr`` so a file reads back to the same numbers;
equal seeds and configurations give byte-identical files.
"""

from __future__ import annotations

import csv
import hashlib
import io
import time
from dataclasses import dataclass

from .decoy import KeyRateParams, TallyAnalysis, analyze_tally
from .sifting import DecoyTally
from .timecost import SERIES_COLUMNS, SWEEP_COLUMNS, PipelineMetrics, Scenario, SweepPoint, duty_report, run

METRICS_COLUMNS = ("row",) + SERIES_COLUMNS
ANALYSIS_COLUMNS = ("quantity", "value")


def scenario_digest(scenario: Scenario) -> str:
    return hashlib.sha256(repr(scenario).encode()).hexdigest()[:16]


def _csv(header, rows) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return out.getvalue()


@dataclass(frozen=True)
class RunReport:
    scenario_digest: str
    metrics: PipelineMetrics
    secret_bits: int
    runtime_s: float

    def rows(self) -> list[tuple[str, object]]:
        """Key/value summary; the wall-clock runtime is left out so files stay reproducible."""
        m = self.metrics
        rows = [
            ("scenario_digest", self.scenario_digest),
            ("elapsed_ms", m.elapsed_ms),
            ("frames", m.frames),
            ("raw_bits", m.raw_bits),
            ("sifted_bits", m.sifted_bits),
            ("corrected_bits", m.corrected_bits),
            ("blocks_ok", m.blocks_ok),
            ("blocks_failed", m.blocks_failed),
            ("leakage_bits", m.leakage_bits),
            ("secret_bits", self.secret_bits),
            ("raw_kbps", m.raw_rate),
            ("sifted_kbps", m.sifted_rate),
            ("corrected_kbps", m.corrected_rate),
            ("secret_kbps", m.secret_rate),
            ("duty", duty_report(m)),
            ("qber", m.qber),
            ("compensations", m.compensations),
            ("mean_g_ms", m.mean_g_ms),
            ("mean_h_ms", m.mean_h_ms),
        ]
        if m.analysis is not None:
            rows += [(k, v) for k, v in m.analysis.report_rows()]
        return rows

    def to_csv(self) -> str:
        return _csv(("key", "value"), self.rows())


def simulate(scenario: Scenario, frames: int | None = None, duration_ms: float | None = None) -> RunReport:
    t0 = time.perf_counter()
    m = run(scenario, frames=frames, duration_ms=duration_ms)
    return RunReport(scenario_digest(scenario), m, m.secret_bits, time.perf_counter() - t0)


def metrics_csv(m: PipelineMetrics) -> str:
    rows = [("sample", *r) for r in m.series]
    rows.append(("summary", m.elapsed_ms, m.frames, m.raw_bits, m.sifted_bits, m.corrected_bits,
                 "", "", "", m.compensations))
    return _csv(METRICS_COLUMNS, rows)


def sweep_csv(points: list[SweepPoint]) -> str:
    return _csv(SWEEP_COLUMNS, [tuple(getattr(p, c) for c in SWEEP_COLUMNS) for p in points])


def read_sweep_csv(text: str) -> list[SweepPoint]:
    reader = csv.DictReader(io.StringIO(text))
    return [SweepPoint(**{c: float(row[c]) for c in SWEEP_COLUMNS}) for row in reader]


def analyze(tally: DecoyTally, scenario: Scenario) -> TallyAnalysis:
    return analyze_tally(tally, scenario.pulse, KeyRateParams(scenario.reconcile.f_ec, 0.5), scenario.y0)


def analysis_csv(analysis: TallyAnalysis) -> str:
    return _csv(ANALYSIS_COLUMNS, analysis.report_rows())
