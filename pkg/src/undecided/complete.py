"""Undecided-State Dynamics on the complete graph.

Every round, each agent pulls the state of a uniformly random agent (itself
included) and updates by the rule

    ===========  =========  ========  =========
    own / seen   undecided  color i   color j
    ===========  =========  ========  =========
    undecided    undecided  i         j
    color i      i          i         undecided
    ===========  =========  ========  =========

:func:`step` samples the next configuration directly from class-level
binomial/multinomial laws; :func:`step_agentwise` simulates every agent and
serves as a reference.
"""
from __future__ import annotations

import csv
import enum
import io
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .config import ColorConfiguration, _from_label_array, big_r, gamma_drift, make_config, md, rr
from .errors import ParameterError, ValidationError

log = logging.getLogger(__name__)

UNDECIDED = 0


def update_rule(own: int, seen: int) -> int:
    """Table-driven update for one agent; 0 encodes the undecided state."""
    if own == UNDECIDED:
        return seen
    if seen == UNDECIDED or seen == own:
        return own
    return UNDECIDED


def update_rule_array(own: np.ndarray, seen: np.ndarray) -> np.ndarray:
    keep = (seen == UNDECIDED) | (seen == own)
    return np.where(own == UNDECIDED, seen, np.where(keep, own, UNDECIDED))


@dataclass(frozen=True)
class AgentStates:
    """Per-agent states: ``colors[u]`` is a color label in 1..k, or 0 if undecided."""

    colors: np.ndarray
    k: int

    def __post_init__(self):
        colors = np.asarray(self.colors, dtype=np.int64)
        if colors.ndim != 1 or colors.size == 0:
            raise ValidationError("agent states must be a nonempty 1-d array")
        if colors.min() < 0 or colors.max() > self.k:
            raise ValidationError(f"agent states must lie in 0..{self.k}")
        object.__setattr__(self, "colors", colors)

    @property
    def n(self) -> int:
        return self.colors.size

    def to_config(self) -> ColorConfiguration:
        tally = np.bincount(self.colors, minlength=self.k + 1)
        return _from_label_array(tally[1:], tally[0])

    @classmethod
    def from_config(cls, config: ColorConfiguration, rng: np.random.Generator | None = None) -> "AgentStates":
        """Agents ``0..n-1`` colored block by block in label order, or in a random
        arrangement when ``rng`` is given."""
        colors = np.repeat(np.arange(config.k + 1), [config.q, *config.by_label()])
        if rng is not None:
            colors = rng.permutation(colors)
        return cls(colors, config.k)

    def __eq__(self, other):
        if not isinstance(other, AgentStates):
            return NotImplemented
        return self.k == other.k and np.array_equal(self.colors, other.colors)

    __hash__ = None


def step(config: ColorConfiguration, rng: np.random.Generator) -> ColorConfiguration:
    """Sample the configuration after one round.

    A color-i agent keeps its color when it sees color i or an undecided agent
    (probability ``(c_i + q)/n``) and becomes undecided otherwise.  Undecided
    agents split multinomially over what they see.
    """
    n, q = config.n, config.q
    if config.is_absorbing:
        return config
    by_label = np.asarray(config.by_label(), dtype=np.int64)
    kept = rng.binomial(by_label, (by_label + q) / n)
    adopted = rng.multinomial(q, np.append(by_label, q) / n)
    new = kept + adopted[:-1]
    return _from_label_array(new, n - int(new.sum()))


def step_agentwise(states: AgentStates, rng: np.random.Generator) -> AgentStates:
    seen = states.colors[rng.integers(0, states.n, size=states.n)]
    return AgentStates(update_rule_array(states.colors, seen), states.k)


class OutcomeKind(str, enum.Enum):
    PLURALITY_WIN = "PluralityWin"
    OTHER_WIN = "OtherWin"
    ALL_UNDECIDED_STALL = "AllUndecidedStall"
    TIMEOUT = "Timeout"


@dataclass(frozen=True)
class Outcome:
    kind: OutcomeKind
    #: winning color label for PluralityWin/OtherWin
    label: int | None = None

    def __str__(self):
        return self.kind.value if self.label is None else f"{self.kind.value}({self.label})"


@dataclass(frozen=True)
class RunParams:
    max_rounds: int = 100_000
    record_every: int = 1
    alpha_hint: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.max_rounds < 1:
            raise ParameterError("max_rounds must be >= 1")
        if self.record_every < 1:
            raise ParameterError("record_every must be >= 1")
        if not self.alpha_hint > 0:
            raise ParameterError("alpha_hint must be positive")

    def to_dict(self) -> dict:
        return {"max_rounds": self.max_rounds, "record_every": self.record_every,
                "alpha_hint": self.alpha_hint, "seed": self.seed}


@dataclass(frozen=True)
class TraceRow:
    round: int
    counts: tuple[int, ...]
    q: int
    R: float | None
    md: float | None
    gamma_valid: bool
    gamma: float | None
    #: expander runs only: per-phase congestion summary
    max_congestion: int | None = None
    tokens_completed: int | None = None

    @property
    def n(self) -> int:
        return sum(self.counts) + self.q

    @property
    def c1(self) -> int:
        return self.counts[0]

    def config(self, labels=None) -> ColorConfiguration:
        if labels is None:
            return make_config(self.counts, self.q)
        return ColorConfiguration(self.counts, self.q, tuple(labels))


def make_row(rnd: int, config: ColorConfiguration, alpha: float, **extra) -> TraceRow:
    if config.counts[0] > 0:
        r_val, md_val = big_r(config), md(config)
        drift = gamma_drift(config, alpha)
        gamma_val = float(drift.value) if drift.valid else None
        valid = drift.valid
    else:
        r_val = md_val = gamma_val = None
        valid = False
    return TraceRow(rnd, config.counts, config.q, r_val, md_val, valid, gamma_val, **extra)


@dataclass
class RunTrace:
    rows: list[TraceRow]
    outcome: Outcome
    convergence_round: int | None
    initial: ColorConfiguration
    seed: int | None = None
    final: ColorConfiguration | None = None
    extra: dict = field(default_factory=dict)

    CSV_HEADER = ("round", "q", "c1", "c2", "ck", "R", "md", "gamma_valid", "gamma")

    def summary(self) -> dict:
        init = self.initial
        return {
            "outcome": str(self.outcome),
            "convergence_round": self.convergence_round,
            "md0": md(init),
            "R0": big_r(init),
            "rr0": rr(init),
            "seed": self.seed,
        }

    def write_csv(self, fh) -> None:
        expander = any(r.max_congestion is not None for r in self.rows)
        header = list(self.CSV_HEADER)
        if expander:
            header += ["max_congestion", "tokens_completed"]
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in self.rows:
            c2 = r.counts[1] if len(r.counts) > 1 else 0
            line = [r.round, r.q, r.c1, c2, r.counts[-1], _fmt(r.R), _fmt(r.md),
                    int(r.gamma_valid), _fmt(r.gamma)]
            if expander:
                line += [_fmt(r.max_congestion), _fmt(r.tokens_completed)]
            w.writerow(line)

    def to_csv(self) -> str:
        buf = io.StringIO()
        self.write_csv(buf)
        return buf.getvalue()

    def summary_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True, indent=2)


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def classify(config: ColorConfiguration, plurality_label: int) -> Outcome | None:
    """Outcome if ``config`` is absorbing, else None."""
    if config.is_all_undecided:
        return Outcome(OutcomeKind.ALL_UNDECIDED_STALL)
    if config.is_monochromatic:
        winner = config.labels[0]
        kind = OutcomeKind.PLURALITY_WIN if winner == plurality_label else OutcomeKind.OTHER_WIN
        return Outcome(kind, winner)
    return None


def _should_record(rnd: int, every: int) -> bool:
    return rnd <= 1 or rnd % every == 0


def run(config: ColorConfiguration, params: RunParams, rng: np.random.Generator | None = None) -> RunTrace:
    """Iterate :func:`step` until absorption or ``params.max_rounds``.

    Rounds 0, 1 and the final round are always recorded; others every
    ``params.record_every`` rounds.  Without ``rng`` a generator is seeded from
    ``params.seed``.
    """
    if rng is None:
        rng = np.random.default_rng(params.seed)
    if config.q > 0:
        log.warning("starting run from a configuration with q=%d undecided agents", config.q)
    plurality = config.plurality_label
    alpha = params.alpha_hint
    rows = [make_row(0, config, alpha)]
    current = config
    rnd = 0
    outcome = classify(current, plurality)
    while outcome is None and rnd < params.max_rounds:
        current = step(current, rng)
        rnd += 1
        outcome = classify(current, plurality)
        if outcome is not None or rnd == params.max_rounds or _should_record(rnd, params.record_every):
            rows.append(make_row(rnd, current, alpha))
    if outcome is None:
        return RunTrace(rows, Outcome(OutcomeKind.TIMEOUT), None, config, params.seed, current)
    return RunTrace(rows, outcome, rnd, config, params.seed, current)


def first_round_in_ranges(config: ColorConfiguration, after: ColorConfiguration) -> tuple[bool, bool]:
    """Whether C_1 and Q after the first round fall in the ranges
    [n/(2R^2), 2n/R^2] and [n(1 - 2/rr), n(1 - 1/(2 rr))] of the start."""
    n = config.n
    r0, rr0 = big_r(config), rr(config)
    c1 = after.count_of(config.plurality_label)
    ok_c1 = n / (2 * r0 * r0) <= c1 <= 2 * n / (r0 * r0)
    ok_q = n * (1 - 2 / rr0) <= after.q <= n * (1 - 1 / (2 * rr0))
    return ok_c1, ok_q

