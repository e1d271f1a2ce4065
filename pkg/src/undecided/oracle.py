"""Exact one-step laws and absorption analysis for tiny instances.

Everything here is brute force and label-resolved: two configurations with
the same sorted counts but different color labels are different states.
"""
from __future__ import annotations

import itertools
import json
import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .complete import update_rule
from .config import ColorConfiguration, make_config
from .errors import CapacityError, NumericError

DEFAULT_MAX_N = 12
DEFAULT_MAX_K = 3
MAX_NEXT_STATES = 10**5
MAX_SOLVE_STATES = 5000


class ConfigDistribution(dict):
    """Mapping ``ColorConfiguration -> probability``."""

    def mean_counts(self) -> tuple[np.ndarray, float]:
        """Expected per-label counts and expected undecided count."""
        k = next(iter(self)).k
        mu = np.zeros(k)
        mu_q = 0.0
        for cfg, p in self.items():
            mu += p * np.asarray(cfg.by_label(), dtype=float)
            mu_q += p * cfg.q
        return mu, mu_q

    def tv(self, other: dict) -> float:
        keys = set(self) | set(other)
        return 0.5 * sum(abs(self.get(c, 0.0) - other.get(c, 0.0)) for c in keys)

    def to_json(self) -> str:
        entries = sorted(
            ({"counts": list(c.by_label()), "q": c.q, "p": p} for c, p in self.items()),
            key=lambda e: (e["counts"], e["q"]),
        )
        return json.dumps({"distribution": entries}, indent=2)

    @classmethod
    def from_samples(cls, samples) -> "ConfigDistribution":
        tally = defaultdict(int)
        for s in samples:
            tally[s] += 1
        total = sum(tally.values())
        return cls({c: m / total for c, m in tally.items()})


def _guard(config: ColorConfiguration, max_n: int, max_k: int) -> None:
    n, k = config.n, config.k
    if n > max_n or k > max_k:
        raise CapacityError(f"exact oracle limited to n <= {max_n}, k <= {max_k} (got n={n}, k={k})")
    if math.comb(n + k, k) > MAX_NEXT_STATES:
        raise CapacityError(f"{math.comb(n + k, k)} candidate next configurations exceed {MAX_NEXT_STATES}")


def _multinomial_pmf(parts: tuple[int, ...], probs: list[float]) -> float:
    total = sum(parts)
    coeff = math.factorial(total)
    for x in parts:
        coeff //= math.factorial(x)
    p = float(coeff)
    for x, pr in zip(parts, probs):
        if x:
            p *= pr**x
    return p


def _compositions(total: int, parts: int):
    """All tuples of ``parts`` non-negative ints summing to ``total``."""
    for bars in itertools.combinations(range(total + parts - 1), parts - 1):
        prev = -1
        out = []
        for b in bars:
            out.append(b - prev - 1)
            prev = b
        out.append(total + parts - 2 - prev)
        yield tuple(out)


def exact_step_distribution(
    config: ColorConfiguration, max_n: int = DEFAULT_MAX_N, max_k: int = DEFAULT_MAX_K
) -> ConfigDistribution:
    """Exact law of the next configuration.

    Agents of one class are exchangeable, so the class contributions are a
    binomial (colored classes: keep vs. turn undecided) and a multinomial
    (undecided agents: which state they see); these are convolved.
    """
    _guard(config, max_n, max_k)
    n, q, k = config.n, config.q, config.k
    by_label = config.by_label()
    # partial state: (per-label counts..., undecided)
    dist: dict[tuple[int, ...], float] = {(0,) * (k + 1): 1.0}
    for i, c in enumerate(by_label):
        if c == 0:
            continue
        p_keep = (c + q) / n
        law = [(s, math.comb(c, s) * p_keep**s * (1 - p_keep) ** (c - s)) for s in range(c + 1)]
        nxt: dict[tuple[int, ...], float] = defaultdict(float)
        for state, p in dist.items():
            for s, ps in law:
                if ps == 0.0:
                    continue
                new = list(state)
                new[i] += s
                new[k] += c - s
                nxt[tuple(new)] += p * ps
        dist = nxt
    if q:
        probs = [c / n for c in by_label] + [q / n]
        law = [(parts, _multinomial_pmf(parts, probs)) for parts in _compositions(q, k + 1)]
        nxt = defaultdict(float)
        for state, p in dist.items():
            for parts, pp in law:
                if pp == 0.0:
                    continue
                nxt[tuple(a + b for a, b in zip(state, parts))] += p * pp
        dist = nxt
    return ConfigDistribution({make_config(s[:k], s[k]): p for s, p in dist.items()})


def enumerate_step_distribution(config: ColorConfiguration, max_n: int = 6) -> ConfigDistribution:
    """Exact law by visiting all ``n**n`` joint sampling outcomes, agent by agent."""
    n, k = config.n, config.k
    if n > max_n:
        raise CapacityError(f"per-agent enumeration limited to n <= {max_n}")
    agents = [0] * config.q
    for label, c in enumerate(config.by_label(), start=1):
        agents += [label] * c
    out: dict[ColorConfiguration, float] = defaultdict(float)
    weight = 1.0 / n**n
    for picks in itertools.product(range(n), repeat=n):
        tally = [0] * (k + 1)
        for own, j in zip(agents, picks):
            tally[update_rule(own, agents[j])] += 1
        out[make_config(tally[1:], tally[0])] += weight
    return ConfigDistribution(out)


@dataclass
class AbsorptionReport:
    #: absorbing configuration -> probability of ending there
    probabilities: dict
    expected_time: float
    #: None when solved exactly (unbounded horizon)
    horizon: int | None
    #: probability mass not yet absorbed at the horizon (0 for the exact solve)
    residual: float = 0.0

    def probability_of_label(self, label: int) -> float:
        return sum(p for c, p in self.probabilities.items() if c.is_monochromatic and c.labels[0] == label)

    @property
    def stall_probability(self) -> float:
        return sum(p for c, p in self.probabilities.items() if c.is_all_undecided)

    def to_json(self) -> str:
        entries = sorted(
            ({"counts": list(c.by_label()), "q": c.q, "p": p} for c, p in self.probabilities.items()),
            key=lambda e: (e["counts"], e["q"]),
        )
        return json.dumps(
            {"absorption": entries, "expected_time": self.expected_time,
             "horizon": self.horizon, "residual": self.residual},
            indent=2,
        )


def reachable_chain(config: ColorConfiguration, max_n: int = DEFAULT_MAX_N, max_k: int = DEFAULT_MAX_K,
                    max_states: int = MAX_NEXT_STATES):
    """States reachable from ``config`` and the dense transition matrix over them."""
    index = {config: 0}
    states = [config]
    rows = []
    frontier = 0
    while frontier < len(states):
        dist = exact_step_distribution(states[frontier], max_n, max_k)
        row = {}
        for nxt, p in dist.items():
            if nxt not in index:
                index[nxt] = len(states)
                states.append(nxt)
                if len(states) > max_states:
                    raise CapacityError(f"more than {max_states} reachable configurations")
            row[index[nxt]] = p
        rows.append(row)
        frontier += 1
    P = np.zeros((len(states), len(states)))
    for i, row in enumerate(rows):
        for j, p in row.items():
            P[i, j] = p
    return states, P


def exact_absorption(config: ColorConfiguration, horizon: int | None = None,
                     max_n: int = DEFAULT_MAX_N, max_k: int = DEFAULT_MAX_K) -> AbsorptionReport:
    """Absorption probabilities and expected absorption time.

    Absorbing states are the monochromatic configurations and the
    all-undecided one.  With ``horizon=None`` the fundamental linear system is
    solved; otherwise the chain is iterated ``horizon`` rounds and the
    unabsorbed mass is reported as ``residual``.
    """
    if config.is_absorbing:
        return AbsorptionReport({config: 1.0}, 0.0, horizon, 0.0)
    states, P = reachable_chain(config, max_n, max_k)
    absorbing = [i for i, s in enumerate(states) if s.is_absorbing]
    transient = [i for i, s in enumerate(states) if not s.is_absorbing]
    if horizon is None:
        if len(states) > MAX_SOLVE_STATES:
            raise CapacityError(f"{len(states)} states exceed the dense-solve limit {MAX_SOLVE_STATES}; pass a horizon")
        Q = P[np.ix_(transient, transient)]
        R = P[np.ix_(transient, absorbing)]
        A = np.eye(len(transient)) - Q
        try:
            B = np.linalg.solve(A, R)
            t = np.linalg.solve(A, np.ones(len(transient)))
        except np.linalg.LinAlgError as exc:
            raise NumericError("absorption system is singular") from exc
        start = transient.index(0)
        probs = {states[j]: float(B[start, col]) for col, j in enumerate(absorbing)}
        return AbsorptionReport(probs, float(t[start]), None, 0.0)

    x = np.zeros(len(states))
    x[0] = 1.0
    alive = np.zeros(len(states), dtype=bool)
    alive[transient] = True
    expected = 0.0
    for _ in range(horizon):
        expected += x[alive].sum()
        x = x @ P
    probs = {states[j]: float(x[j]) for j in absorbing}
    return AbsorptionReport(probs, float(expected), horizon, float(x[alive].sum()))
