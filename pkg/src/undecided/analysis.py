"""Trajectory analysis: phase boundaries, md sweeps and monotonicity audits."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .complete import OutcomeKind, RunParams, RunTrace, run
from .config import InitSpec, big_r, expected_next, generate_initial, make_config, md
from .errors import AnalysisError

log = logging.getLogger(__name__)

DEFAULT_GAMMA = 4.0
DEFAULT_EPS_TILDE = 0.05


@dataclass(frozen=True)
class PhaseBoundaries:
    first_round_end: int | None
    #: first round with q < n/2 + eps_tilde * n
    age_of_undecided_end: int | None
    #: first round (not before the previous boundary) with c_1 > 2 gamma n / md0
    plateau_end: int | None
    convergence_round: int | None
    md0: float
    #: whether |q - n/2| <= 2 gamma^2 n/md0 and c_1 <= gamma n/md0 at plateau entry
    plateau_precondition: bool = False

    @property
    def plateau_length(self) -> int | None:
        if self.age_of_undecided_end is None or self.plateau_end is None:
            return None
        return self.plateau_end - self.age_of_undecided_end

    def to_dict(self) -> dict:
        out = asdict(self)
        out["plateau_length"] = self.plateau_length
        return out


def _first(rows, start: int, pred) -> int | None:
    for r in rows:
        if r.round >= start and pred(r):
            return r.round
    return None


def detect_phases(trace: RunTrace, gamma: float = DEFAULT_GAMMA, eps_tilde: float = DEFAULT_EPS_TILDE) -> PhaseBoundaries:
    """Locate the end of the undecided-dominated phase and of the plateau.

    Thresholds use md of the initial configuration.  Rows should be recorded
    every round over the region of interest, otherwise boundaries are only
    resolved to the recording stride.
    """
    rows = trace.rows
    n = rows[0].n
    md0 = md(trace.initial)
    if trace.convergence_round == 0:
        return PhaseBoundaries(0, 0, 0, 0, md0, False)
    if not any(r.round == 1 for r in rows):
        raise AnalysisError("trace has no round-1 row")
    age_end = _first(rows, 1, lambda r: r.q < n / 2 + eps_tilde * n)
    plateau_end = None
    precondition = False
    if age_end is not None:
        threshold = 2 * gamma * n / md0
        plateau_end = _first(rows, age_end, lambda r: r.c1 > threshold)
        entry = next(r for r in rows if r.round == age_end)
        precondition = abs(entry.q - n / 2) <= 2 * gamma**2 * n / md0 and entry.c1 <= gamma * n / md0
    return PhaseBoundaries(1, age_end, plateau_end, trace.convergence_round, md0, precondition)


def plateau_persistence(trace: RunTrace, gamma: float = DEFAULT_GAMMA, eps_tilde: float = DEFAULT_EPS_TILDE) -> int | None:
    """Consecutive recorded rounds, from plateau entry on, with c_1 < 2 gamma n / md0.

    None when the trace never enters the plateau.
    """
    b = detect_phases(trace, gamma, eps_tilde)
    if b.age_of_undecided_end is None:
        return None
    n = trace.rows[0].n
    threshold = 2 * gamma * n / b.md0
    count = 0
    for r in trace.rows:
        if r.round < b.age_of_undecided_end:
            continue
        if r.c1 >= threshold:
            break
        count += 1
    return count


def plateau_target(md0: float, gamma: float = DEFAULT_GAMMA) -> int:
    return math.floor(md0 / (4 * gamma * (1 + gamma)))


@dataclass(frozen=True)
class MonotonicityReport:
    eligible: int
    violations: int
    #: round t of each violating transition t -> t+1
    locations: tuple[int, ...]
    insufficient_data: bool

    @property
    def violation_fraction(self) -> float:
        return self.violations / self.eligible if self.eligible else 0.0


def check_monotonicity(trace: RunTrace, lambda_threshold: float = 10.0, kappa: float = 10.0) -> MonotonicityReport:
    """Audit R(t+1) <= R(t) * (1 + kappa * sqrt(ln n / mu_1)) over consecutive rows.

    A transition is eligible when the expected plurality mu_1 at round t is at
    least ``lambda_threshold * ln n`` and both rounds have a colored agent.
    """
    rows = trace.rows
    if not rows:
        return MonotonicityReport(0, 0, (), True)
    ln_n = math.log(rows[0].n)
    eligible = violations = 0
    locations = []
    for a, b in zip(rows, rows[1:]):
        if b.round != a.round + 1 or a.R is None or b.R is None:
            continue
        mu1 = expected_next(make_config(a.counts, a.q)).mu[0]
        if mu1 < lambda_threshold * ln_n:
            continue
        eligible += 1
        if b.R > a.R * (1 + kappa * math.sqrt(ln_n / mu1)):
            violations += 1
            locations.append(a.round)
    return MonotonicityReport(eligible, violations, tuple(locations), eligible == 0)


@dataclass(frozen=True)
class SweepRow:
    spec: InitSpec
    md0: float
    R0: float
    runs: int
    #: over runs ending in consensus on some color
    mean_rounds: float
    std_rounds: float
    plateau_mean: float
    stall_frequency: float
    win_frequency: float
    timeout_frequency: float
    #: runs whose plateau entry missed the lower-bound precondition
    plateau_flagged: int


@dataclass
class SweepResult:
    rows: list[SweepRow]
    #: Pearson correlations; None when undefined (constant input)
    corr_time_vs_md_log_n: float | None
    corr_plateau_vs_md: float | None
    seeds: tuple[int, ...] = field(default=())

    CSV_HEADER = ("kind", "n", "k", "alpha", "elite", "md0", "R0", "runs", "mean_rounds", "std_rounds",
                  "plateau_mean", "stall_frequency", "win_frequency", "timeout_frequency", "plateau_flagged")

    def write_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(self.CSV_HEADER)
        for r in self.rows:
            s = r.spec
            w.writerow([s.kind, s.n, s.k, repr(s.alpha), "" if s.elite is None else s.elite,
                        repr(r.md0), repr(r.R0), r.runs, repr(r.mean_rounds), repr(r.std_rounds),
                        repr(r.plateau_mean), repr(r.stall_frequency), repr(r.win_frequency),
                        repr(r.timeout_frequency), r.plateau_flagged])

    def to_csv(self) -> str:
        buf = io.StringIO()
        self.write_csv(buf)
        return buf.getvalue()

    def fit(self) -> dict:
        return {
            "corr_time_vs_md_log_n": self.corr_time_vs_md_log_n,
            "corr_time_defined": self.corr_time_vs_md_log_n is not None,
            "corr_plateau_vs_md": self.corr_plateau_vs_md,
            "corr_plateau_defined": self.corr_plateau_vs_md is not None,
            "seeds": list(self.seeds),
        }

    def fit_json(self) -> str:
        return json.dumps(self.fit(), indent=2, sort_keys=True)


def pearson(x: Sequence[float], y: Sequence[float]) -> float | None:
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if x.size < 2 or np.ptp(x) == 0 or np.ptp(y) == 0 or not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        return None
    return float(np.corrcoef(x, y)[0, 1])


def _one_run(task):
    spec, seed, params, gamma, eps_tilde = task
    config = generate_initial(spec)
    trace = run(config, RunParams(params.max_rounds, 1, params.alpha_hint, seed))
    b = detect_phases(trace, gamma, eps_tilde)
    return trace.outcome.kind, trace.convergence_round, b.plateau_length, b.plateau_precondition


def sweep_md(specs: Sequence[InitSpec], seeds: Sequence[int], params: RunParams, gamma: float = DEFAULT_GAMMA,
             eps_tilde: float = DEFAULT_EPS_TILDE, workers: int = 1) -> SweepResult:
    """Run every (spec, seed) pair and aggregate convergence statistics per spec.

    Runs record every round so plateau lengths are exact.  Results do not
    depend on ``workers``.
    """
    if not seeds:
        raise AnalysisError("sweep needs at least one seed")
    configs = [generate_initial(s) for s in specs]
    if len({c.n for c in configs}) > 1:
        raise AnalysisError("sweep family members must share n")
    mds = [md(c) for c in configs]
    if max(mds) < 8 * min(mds):
        log.warning("sweep md values span less than a factor 8 (%.3g..%.3g)", min(mds), max(mds))
    tasks = [(spec, seed, params, gamma, eps_tilde) for spec in specs for seed in seeds]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_one_run, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    else:
        results = [_one_run(t) for t in tasks]

    rows = []
    for i, (spec, config) in enumerate(zip(specs, configs)):
        chunk = results[i * len(seeds):(i + 1) * len(seeds)]
        kinds = [c[0] for c in chunk]
        times = [c[1] for c in chunk if c[0] in (OutcomeKind.PLURALITY_WIN, OutcomeKind.OTHER_WIN)]
        plateaus = [c[2] for c in chunk if c[2] is not None]
        m = len(chunk)
        rows.append(SweepRow(
            spec=spec,
            md0=md(config),
            R0=big_r(config),
            runs=m,
            mean_rounds=float(np.mean(times)) if times else math.nan,
            std_rounds=float(np.std(times)) if times else math.nan,
            plateau_mean=float(np.mean(plateaus)) if plateaus else math.nan,
            stall_frequency=kinds.count(OutcomeKind.ALL_UNDECIDED_STALL) / m,
            win_frequency=kinds.count(OutcomeKind.PLURALITY_WIN) / m,
            timeout_frequency=kinds.count(OutcomeKind.TIMEOUT) / m,
            plateau_flagged=sum(1 for c in chunk if c[2] is not None and not c[3]),
        ))
    ln_n = math.log(configs[0].n)
    x = [r.md0 * ln_n for r in rows]
    return SweepResult(
        rows,
        pearson(x, [r.mean_rounds for r in rows]),
        pearson([r.md0 for r in rows], [r.plateau_mean for r in rows]),
        tuple(seeds),
    )
