"""Color configurations, global-bias metrics and one-step expectations.

A configuration is the Markov-chain state of the Undecided-State Dynamics on
the complete graph: how many agents hold each color, plus how many are
undecided.  Counts are kept sorted non-increasingly (so ``counts[0]`` is the
current plurality) while ``labels`` remembers which original color sits in
each slot.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ParameterError, SpecError, UndefinedMetricError, ValidationError

__all__ = [
    "ColorConfiguration",
    "ExpectedStep",
    "Drift",
    "InitSpec",
    "make_config",
    "md",
    "big_r",
    "rr",
    "expected_next",
    "gamma_drift",
    "generate_initial",
    "oligarchic_family",
]

# counts and their squares must stay exact in 64-bit arithmetic
MAX_AGENTS = 2**62


@dataclass(frozen=True)
class ColorConfiguration:
    counts: tuple[int, ...]
    q: int
    labels: tuple[int, ...]

    @property
    def n(self) -> int:
        return sum(self.counts) + self.q

    @property
    def k(self) -> int:
        return len(self.counts)

    @property
    def plurality_label(self) -> int:
        return self.labels[0]

    def by_label(self) -> tuple[int, ...]:
        """Counts indexed by original color label (label ``l`` at index ``l-1``)."""
        out = [0] * self.k
        for label, c in zip(self.labels, self.counts):
            out[label - 1] = c
        return tuple(out)

    def count_of(self, label: int) -> int:
        return self.counts[self.labels.index(label)]

    @property
    def is_monochromatic(self) -> bool:
        return self.q == 0 and self.counts[0] == self.n and self.n > 0

    @property
    def is_all_undecided(self) -> bool:
        return self.q == self.n

    @property
    def is_absorbing(self) -> bool:
        return self.is_monochromatic or self.is_all_undecided

    def to_dict(self) -> dict:
        return {"counts": list(self.by_label()), "q": self.q}

    @classmethod
    def from_dict(cls, data: dict) -> "ColorConfiguration":
        try:
            return make_config(data["counts"], data.get("q", 0))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed configuration object: {data!r}") from exc


def _as_count(value, what: str) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        else:
            raise ValidationError(f"{what} must be an integer, got {value!r}")
    value = int(value)
    if value < 0:
        raise ValidationError(f"{what} must be non-negative, got {value}")
    return value


def make_config(raw_counts: Sequence[int], undecided: int = 0) -> ColorConfiguration:
    """Build a configuration from per-label counts.

    ``raw_counts[l-1]`` is the number of agents holding color ``l``.  The
    result stores counts sorted non-increasingly; ties keep label order.

    >>> c = make_config([2, 4, 2])
    >>> c.counts, c.labels, c.n
    ((4, 2, 2), (2, 1, 3), 8)
    """
    raw = [_as_count(c, "color count") for c in raw_counts]
    if not raw:
        raise ValidationError("a configuration needs at least one color")
    q = _as_count(undecided, "undecided count")
    if sum(raw) + q > MAX_AGENTS:
        raise ValidationError(f"total agent count exceeds {MAX_AGENTS}")
    order = sorted(range(len(raw)), key=lambda i: -raw[i])
    return ColorConfiguration(
        counts=tuple(raw[i] for i in order),
        q=q,
        labels=tuple(i + 1 for i in order),
    )


def _from_label_array(by_label: np.ndarray, q: int) -> ColorConfiguration:
    # fast path for samplers: inputs are already validated non-negative ints
    order = np.argsort(-by_label, kind="stable")
    return ColorConfiguration(
        counts=tuple(int(x) for x in by_label[order]),
        q=int(q),
        labels=tuple(int(i) + 1 for i in order),
    )


def _plurality(config: ColorConfiguration) -> int:
    c1 = config.counts[0]
    if c1 <= 0:
        raise UndefinedMetricError("bias metrics are undefined when no agent holds a color")
    return c1


def md(config: ColorConfiguration) -> float:
    """Monochromatic distance: sum of squared ratios c_i / c_1."""
    c1 = _plurality(config)
    return sum(c * c for c in config.counts) / (c1 * c1)


def big_r(config: ColorConfiguration) -> float:
    """Ratio of all colored agents to the plurality, (n - q) / c_1."""
    c1 = _plurality(config)
    return (config.n - config.q) / c1


def rr(config: ColorConfiguration) -> float:
    return big_r(config) ** 2 / md(config)


class ExpectedStep(NamedTuple):
    """Expected configuration after one round; ``mu`` follows ``config.counts``."""

    mu: tuple
    mu_q: float | Fraction


def expected_next(config: ColorConfiguration, exact: bool = False) -> ExpectedStep:
    """Expected per-color and undecided counts after one synchronous round.

    Each color grows at rate ``(c_i + 2q) / n``.  With ``exact=True`` every
    value is a :class:`~fractions.Fraction`.
    """
    n = config.n
    if n <= 0:
        raise ValidationError("expectations need at least one agent")
    q = config.q
    sq = sum(c * c for c in config.counts)
    if exact:
        mu = tuple(Fraction(c * (c + 2 * q), n) for c in config.counts)
        mu_q = Fraction(q * q + (n - q) ** 2 - sq, n)
    else:
        mu = tuple(c * (c + 2 * q) / n for c in config.counts)
        mu_q = (q * q + (n - q) ** 2 - sq) / n
    return ExpectedStep(mu, mu_q)


class Drift(NamedTuple):
    value: float | Fraction
    #: whether c_1 >= (1 + alpha) c_i holds for every other color
    valid: bool


def gamma_drift(config: ColorConfiguration, alpha, exact: bool = False) -> Drift:
    """Closed-form lower bound on the expected growth of (C_1 + 2Q)/n, minus one.

    The bound is only guaranteed under the bias hypothesis; when it fails the
    value is still returned with ``valid=False`` so whole trajectories can be
    annotated.  An all-undecided configuration yields ``(nan, False)``.
    """
    if not alpha > 0:
        raise ParameterError(f"alpha must be positive, got {alpha}")
    c1 = config.counts[0]
    if c1 == 0:
        return Drift(math.nan, False)
    n, q = config.n, config.q
    others = config.counts[1:]
    if exact:
        alpha = Fraction(alpha)
        gamma = 1 / (1 + alpha)
        r = Fraction(n - q, c1)
        value = (1 - Fraction(c1 + 2 * q, n)) ** 2 + 2 * (1 - gamma) * (r - 1) * Fraction(c1, n) ** 2
    else:
        gamma = 1.0 / (1.0 + alpha)
        r = (n - q) / c1
        value = (1 - (c1 + 2 * q) / n) ** 2 + 2 * (1 - gamma) * (r - 1) * (c1 / n) ** 2
    valid = all(c1 >= (1 + alpha) * c for c in others)
    return Drift(value, valid)


KINDS = ("uniform", "oligarchic", "figure2", "custom")


@dataclass(frozen=True)
class InitSpec:
    """Recipe for an initial configuration (always with ``q = 0``).

    ``uniform``: the plurality is ``(1 + alpha)`` times every other color, the
    others are equal.  ``oligarchic``: ``elite`` colors (the plurality
    included) are ``sqrt(k)`` times larger than the remaining ones, and the
    plurality leads the other elites by ``(1 + alpha)``.  ``figure2``: the
    plurality holds ``2n/k`` and the others ``(n/k)(1 - 2/k)``.  ``custom``:
    explicit per-label counts.
    """

    kind: str
    n: int = 0
    k: int = 0
    alpha: float = 0.0
    elite: int | None = None
    counts: tuple[int, ...] | None = field(default=None)

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "n": self.n, "k": self.k, "alpha": self.alpha}
        if self.elite is not None:
            out["elite"] = self.elite
        if self.counts is not None:
            out["counts"] = list(self.counts)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "InitSpec":
        if "kind" not in data:
            raise SpecError("init spec needs a 'kind' discriminator")
        unknown = set(data) - {"kind", "n", "k", "alpha", "elite", "counts"}
        if unknown:
            raise SpecError(f"unknown init spec fields: {sorted(unknown)}")
        counts = data.get("counts")
        return cls(
            kind=data["kind"],
            n=int(data.get("n", sum(counts) if counts else 0)),
            k=int(data.get("k", len(counts) if counts else 0)),
            alpha=float(data.get("alpha", 0.0)),
            elite=None if data.get("elite") is None else int(data["elite"]),
            counts=None if counts is None else tuple(int(c) for c in counts),
        )


def _check_bias(counts: Sequence[int], alpha: float) -> None:
    if alpha > 0 and any(counts[0] < (1 + alpha) * c for c in counts[1:]):
        raise SpecError(f"counts {list(counts)} do not satisfy the requested bias alpha={alpha}")


def _floored_with_remainder(n: int, plurality: float, others: Sequence[float]) -> list[int]:
    rest = [math.floor(x) for x in others]
    c1 = math.floor(plurality)
    c1 += n - c1 - sum(rest)
    return [c1, *rest]


def generate_initial(spec: InitSpec, rng: np.random.Generator | None = None) -> ColorConfiguration:
    """Realise ``spec`` as a configuration with ``q = 0``.

    Fractional sizes are floored and the shortfall goes to the plurality.
    Without ``rng`` the plurality is color 1; with it, color labels are
    randomly permuted.
    """
    kind, n, k, alpha = spec.kind, spec.n, spec.k, spec.alpha
    if kind not in KINDS:
        raise SpecError(f"unknown init kind {kind!r}; expected one of {KINDS}")
    if alpha < 0:
        raise SpecError("alpha must be non-negative")
    if kind == "custom":
        if not spec.counts:
            raise SpecError("custom spec needs explicit counts")
        counts = sorted(spec.counts, reverse=True)
        if spec.n and spec.n != sum(counts):
            raise SpecError(f"custom counts sum to {sum(counts)}, spec says n={spec.n}")
        if spec.k and spec.k != len(counts):
            raise SpecError(f"custom spec has {len(counts)} counts, spec says k={spec.k}")
        raw = list(spec.counts)
        _check_bias(counts, alpha)
        if rng is not None:
            raw = [raw[i] for i in rng.permutation(len(raw))]
        return make_config(raw, 0)

    if not (1 <= k <= n):
        raise SpecError(f"need n >= k >= 1, got n={n}, k={k}")
    if kind == "uniform":
        base = n / (k - 1 + (1 + alpha))
        counts = _floored_with_remainder(n, (1 + alpha) * base, [base] * (k - 1))
    elif kind == "figure2":
        counts = _floored_with_remainder(n, 2 * n / k, [(n / k) * (1 - 2 / k)] * (k - 1))
    else:
        elite = spec.elite
        if elite is None or not (1 <= elite <= k):
            raise SpecError(f"oligarchic spec needs 1 <= elite <= k, got {elite}")
        small = 1 / math.sqrt(k)
        e = n / ((1 + alpha) + (elite - 1) + (k - elite) * small)
        counts = _floored_with_remainder(n, (1 + alpha) * e, [e] * (elite - 1) + [e * small] * (k - elite))

    if counts[0] > n or (kind != "figure2" and k > 1 and min(counts[1:]) <= 0):
        raise SpecError(f"spec {spec} is infeasible at this n (counts {counts})")
    _check_bias(counts, alpha)
    if rng is not None:
        perm = rng.permutation(k)
        raw = [0] * k
        for slot, label in enumerate(perm):
            raw[label] = counts[slot]
        counts = raw
    return make_config(counts, 0)


def oligarchic_family(n: int, k: int, alpha: float, targets: Sequence[float]) -> list[InitSpec]:
    """Oligarchic specs (``elite`` from 1 up to ``k``, i.e. uniform) whose md is
    closest to each target value."""
    candidates = []
    for elite in range(1, k + 1):
        spec = InitSpec("oligarchic", n=n, k=k, alpha=alpha, elite=elite)
        try:
            candidates.append((md(generate_initial(spec)), spec))
        except SpecError:
            continue
    if not candidates:
        raise SpecError(f"no feasible oligarchic spec for n={n}, k={k}")
    return [min(candidates, key=lambda t: abs(t[0] - target))[1] for target in targets]
