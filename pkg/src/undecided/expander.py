"""Undecided-State Dynamics on d-regular expanders via token random walks.

Each phase lasts ``2 * tau`` rounds.  In the forward half every node launches
a token that performs a lazy random walk of ``t_bar`` hops; nodes forward at
most one token per round from a FIFO queue, so tokens may wait.  A token
samples the color of the node where its ``t_bar``-th hop ends.  The backward
half replays the forward transmissions in reverse, bringing every token home,
after which each owner applies the update rule against its token's sample.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from .complete import (AgentStates, Outcome, OutcomeKind, RunParams, RunTrace, classify, make_row,
                       update_rule_array)
from .errors import GenerationError, MixingUndefinedError, ParameterError, ValidationError

STAY = -1
EXACT_MIXING_LIMIT = 2048


@dataclass(frozen=True, eq=False)
class RegularGraph:
    """Simple d-regular graph with port tables.

    ``nbr[u, p]`` is the neighbor behind port ``p`` of ``u`` and ``rev[u, p]``
    the port of that neighbor leading back to ``u``.  Ports list neighbors in
    ascending id order.
    """

    n: int
    d: int
    nbr: np.ndarray
    rev: np.ndarray

    @classmethod
    def from_edges(cls, n: int, edges) -> "RegularGraph":
        adj = [[] for _ in range(n)]
        for u, v in edges:
            if u == v:
                raise ValidationError(f"self-loop at {u}")
            adj[u].append(v)
            adj[v].append(u)
        degrees = {len(a) for a in adj}
        if len(degrees) > 1:
            raise ValidationError(f"graph is not regular (degrees {sorted(degrees)})")
        d = degrees.pop() if degrees else 0
        nbr = np.array([sorted(a) for a in adj], dtype=np.int64).reshape(n, d)
        if d and any(len(set(row)) != d for row in nbr.tolist()):
            raise ValidationError("graph has parallel edges")
        rev = np.empty_like(nbr)
        for u in range(n):
            for p in range(d):
                v = nbr[u, p]
                rev[u, p] = int(np.searchsorted(nbr[v], u))
        return cls(n, d, nbr, rev)

    def edges(self) -> list[tuple[int, int]]:
        return [(u, int(v)) for u in range(self.n) for v in self.nbr[u] if u < v]

    def is_connected(self) -> bool:
        if self.n <= 1:
            return True
        return connected_components(self.adjacency(), directed=False)[0] == 1

    def adjacency(self) -> sparse.csr_matrix:
        rows = np.repeat(np.arange(self.n), self.d)
        data = np.ones(self.n * self.d)
        return sparse.csr_matrix((data, (rows, self.nbr.ravel())), shape=(self.n, self.n))

    def lazy_walk(self, laziness: float = 0.5) -> sparse.csr_matrix:
        P = sparse.identity(self.n, format="csr") * laziness
        if self.d:
            P = P + self.adjacency() * ((1 - laziness) / self.d)
        else:
            P = sparse.identity(self.n, format="csr")
        return P.tocsr()

    def to_edge_list(self) -> str:
        lines = [json.dumps({"n": self.n, "d": self.d})]
        lines += [f"{u} {v}" for u, v in self.edges()]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_edge_list(cls, text: str) -> "RegularGraph":
        lines = text.strip().splitlines()
        header = json.loads(lines[0])
        edges = [tuple(int(x) for x in line.split()) for line in lines[1:] if line.strip()]
        g = cls.from_edges(header["n"], edges)
        if g.d != header["d"] and g.n * header["d"]:
            raise ValidationError(f"header says d={header['d']}, edges give d={g.d}")
        return g


def gen_regular_graph(n: int, d: int, rng: np.random.Generator, max_restarts: int = 1000) -> RegularGraph:
    """Random simple d-regular graph by stub pairing.

    Stubs are shuffled and paired; pairs that would create a self-loop or a
    repeated edge are returned to the pool and re-paired.  If the leftover
    stubs admit no valid pair the whole pairing restarts.
    """
    if d < 0 or n < 1 or d >= n and not (n == 1 and d == 0):
        raise ParameterError(f"need 0 <= d < n, got n={n}, d={d}")
    if (n * d) % 2:
        raise ParameterError(f"n*d must be even, got n={n}, d={d}")
    for _ in range(max_restarts):
        edges = _try_pairing(n, d, rng)
        if edges is not None:
            return RegularGraph.from_edges(n, edges)
    raise GenerationError(f"no simple {d}-regular graph on {n} nodes after {max_restarts} restarts")


def _try_pairing(n: int, d: int, rng: np.random.Generator):
    edges: set[tuple[int, int]] = set()
    stubs = np.repeat(np.arange(n), d)
    while stubs.size:
        rng.shuffle(stubs)
        a, b = np.minimum(stubs[0::2], stubs[1::2]), np.maximum(stubs[0::2], stubs[1::2])
        leftover = []
        for u, v in zip(a.tolist(), b.tolist()):
            if u != v and (u, v) not in edges:
                edges.add((u, v))
            else:
                leftover += [u, v]
        if leftover and not _pairable(leftover, edges):
            return None
        stubs = np.array(leftover, dtype=np.int64)
    return edges


def _pairable(stubs: list[int], edges: set) -> bool:
    nodes = sorted(set(stubs))
    for i, u in enumerate(nodes):
        for v in nodes[i + 1:]:
            if (u, v) not in edges:
                return True
    return False


class MixingTime(int):
    """Round count; ``estimated`` is True when obtained from sampled starts."""

    estimated: bool = False

    def __new__(cls, value: int, estimated: bool = False):
        obj = super().__new__(cls, value)
        obj.estimated = estimated
        return obj


def _worst_tv(D: np.ndarray) -> float:
    # rows of D are distributions
    return 0.5 * float(np.abs(D - 1.0 / D.shape[1]).sum(axis=1).max())


def _first_mixed(P: sparse.csr_matrix, D: np.ndarray, eps: float, max_t: int) -> int:
    # D holds one start distribution per row; P is symmetric
    for t in range(max_t + 1):
        if _worst_tv(D) <= eps:
            return t
        D = (P @ D.T).T
    raise MixingUndefinedError(f"walk did not mix to {eps} within {max_t} rounds")


def mixing_time(graph: RegularGraph, eps: float, laziness: float = 0.5, *, exact_limit: int = EXACT_MIXING_LIMIT,
                sampled_starts: int = 64, rng: np.random.Generator | None = None, max_t: int = 100_000) -> MixingTime:
    """First t where the lazy walk from every start is within TV ``eps`` of uniform.

    Exact up to ``exact_limit`` nodes.  Beyond that, the worst start among
    ``sampled_starts`` random ones is used, and for ``eps < 1/(2e)`` the result
    is ``ceil(ln(1/eps)) * t(1/(2e))``.
    """
    if not 0 < eps:
        raise ParameterError("eps must be positive")
    if not 0 < laziness < 1:
        raise ParameterError("laziness must lie in (0, 1)")
    if eps >= 1:
        return MixingTime(0)
    if not graph.is_connected():
        raise MixingUndefinedError("mixing time is undefined on a disconnected graph")
    P = graph.lazy_walk(laziness)
    n = graph.n
    if n <= exact_limit:
        return MixingTime(_first_mixed(P, np.eye(n), eps, max_t))
    rng = rng or np.random.default_rng(0)
    starts = rng.choice(n, size=min(sampled_starts, n), replace=False)
    D = np.zeros((starts.size, n))
    D[np.arange(starts.size), starts] = 1.0
    base = 1 / (2 * math.e)
    if eps >= base:
        return MixingTime(_first_mixed(P, D, eps, max_t), estimated=True)
    return MixingTime(math.ceil(math.log(1 / eps)) * _first_mixed(P, D, base, max_t), estimated=True)


def tvfall_bound(graph: RegularGraph, eps: float, laziness: float = 0.5) -> int:
    """Upper bound ``ceil(ln(1/eps)) * t_mix(1/(2e))`` on the mixing time at ``eps``."""
    base = mixing_time(graph, 1 / (2 * math.e), laziness)
    return max(1, math.ceil(math.log(1 / eps))) * int(base)


def congestion_bound(tau: float, n: int, c: float = 3.0) -> float:
    """High-probability bound on any node's queue length during a phase of
    ``2 * tau`` rounds: ``max(sqrt(2 c tau ln n), 6 c ln n)``."""
    if tau <= 0 or n <= 0 or c <= 0:
        raise ParameterError("tau, n and c must be positive")
    ln = math.log(n)
    return max(math.sqrt(2 * c * tau * ln), 6 * c * ln)


@dataclass(frozen=True)
class PhaseParams:
    t_bar: int
    tau: int
    alpha: float = 4.0
    c: float = 3.0
    laziness: float = 0.5

    def __post_init__(self):
        if self.t_bar < 0 or self.tau < self.t_bar:
            raise ParameterError(f"need 0 <= t_bar <= tau, got t_bar={self.t_bar}, tau={self.tau}")
        if not self.alpha > 0:
            raise ParameterError("alpha must be positive")
        if not 0 <= self.laziness < 1:
            raise ParameterError("laziness must lie in [0, 1)")

    @classmethod
    def for_graph(cls, graph: RegularGraph, alpha: float = 4.0, c: float = 3.0, laziness: float = 0.5,
                  eps: float | None = None) -> "PhaseParams":
        """``t_bar`` bounds the mixing time at ``eps`` (default ``1/n^2``) and
        ``tau = ceil(alpha * t_bar^2 * ln n)``."""
        n = graph.n
        eps = 1 / n**2 if eps is None else eps
        t_bar = tvfall_bound(graph, eps, laziness) if n > 1 else 0
        tau = math.ceil(alpha * t_bar**2 * math.log(n)) if n > 1 else 0
        return cls(t_bar, max(tau, t_bar), alpha, c, laziness)

    def to_dict(self) -> dict:
        return {"t_bar": self.t_bar, "tau": self.tau, "alpha": self.alpha, "c": self.c,
                "laziness": self.laziness}


@dataclass(frozen=True)
class Token:
    owner: int
    #: port taken at each movement decision, or STAY
    path: tuple[int, ...]
    hops_done: int
    #: color label (0 = undecided) seen after t_bar hops, else None
    sampled_color: int | None
    done: bool


@dataclass
class PhaseStats:
    max_congestion: int
    tokens_completed: int
    all_returned: bool
    tau: int
    t_bar: int
    #: forward rounds actually simulated; after these every token is done and idle
    active_rounds: int
    #: queue statistics after forward rounds 0..active_rounds
    forward_max: np.ndarray
    forward_mean: np.ndarray
    #: queue statistics after undoing forward rounds active_rounds..1
    backward_max: np.ndarray
    backward_mean: np.ndarray
    #: tokens transmitted in each forward round 1..active_rounds
    sends_per_round: np.ndarray
    #: max tokens received by any node in each forward round
    max_received: np.ndarray
    tokens_conserved: bool
    _path: np.ndarray = field(repr=False, default=None)
    _hops: np.ndarray = field(repr=False, default=None)
    _sampled: np.ndarray = field(repr=False, default=None)

    def tokens(self) -> list[Token]:
        out = []
        for u in range(self._hops.size):
            h = int(self._hops[u])
            s = int(self._sampled[u])
            out.append(Token(u, tuple(int(p) for p in self._path[u, :h]), h,
                             None if s < 0 else s, h >= self.t_bar))
        return out

    def to_dict(self) -> dict:
        return {
            "max_congestion": self.max_congestion,
            "tokens_completed": self.tokens_completed,
            "all_returned": self.all_returned,
            "tau": self.tau,
            "t_bar": self.t_bar,
            "active_rounds": self.active_rounds,
            "tokens_conserved": self.tokens_conserved,
        }

    def write_congestion_csv(self, fh) -> None:
        """Per-round queue statistics over the phase.

        ``mean_queue`` averages over nodes holding at least one token.  Rounds
        in the idle stretch between the two halves repeat the last forward row
        and are omitted.
        """
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["round", "max_queue", "mean_queue"])
        for r in range(self.active_rounds + 1):
            w.writerow([r, int(self.forward_max[r]), repr(float(self.forward_mean[r]))])
        for i, r in enumerate(range(self.active_rounds, 0, -1)):
            w.writerow([2 * self.tau + 1 - r, int(self.backward_max[i]), repr(float(self.backward_mean[i]))])

    def congestion_csv(self) -> str:
        buf = io.StringIO()
        self.write_congestion_csv(buf)
        return buf.getvalue()


def _queue_stats(node: np.ndarray, n: int) -> tuple[int, float, int]:
    occ = np.bincount(node, minlength=n)
    busy = occ[occ > 0]
    return int(occ.max()), float(busy.mean()), int(occ.sum())


def run_phase(graph: RegularGraph, states: AgentStates, params: PhaseParams,
              rng: np.random.Generator) -> tuple[AgentStates, PhaseStats]:
    """One forward/backward token phase followed by the color update.

    Nodes are processed in ascending id; a node whose head token already has
    ``t_bar`` hops just re-enqueues it.  Tokens arriving at a node in the same
    round are enqueued in order of sender id (a node re-enqueueing its own
    token counts as the sender).  Owners of tokens that did not finish keep
    their state.
    """
    n, d, t_bar = graph.n, graph.d, params.t_bar
    if states.n != n:
        raise ValidationError(f"{states.n} agent states for a graph with {n} nodes")
    colors = states.colors
    node = np.arange(n)
    key = np.arange(n)
    hops = np.zeros(n, dtype=np.int64)
    path = np.full((n, t_bar), STAY - 1, dtype=np.int32)
    sampled = np.full(n, -1, dtype=np.int64)
    done = hops >= t_bar
    sampled[done] = colors[node[done]]

    mx, mean, total = _queue_stats(node, n)
    fwd_max, fwd_mean = [mx], [mean]
    conserved = total == n
    sends: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []
    sends_per_round, max_received = [], []

    r = 0
    while r < params.tau and not done.all():
        r += 1
        order = np.lexsort((key, node))
        at = node[order]
        first = np.ones(n, dtype=bool)
        first[1:] = at[1:] != at[:-1]
        heads = order[first]
        head_nodes = at[first]

        active = heads[~done[heads]]
        u = node[active]
        m = active.size
        stay = rng.random(m) < params.laziness
        port = rng.integers(0, d, size=m) if d else np.zeros(m, dtype=np.int64)
        if d == 0:
            stay[:] = True
        path[active, hops[active]] = np.where(stay, STAY, port)
        mv = ~stay
        movers, src, ports = active[mv], u[mv], port[mv]
        node[movers] = graph.nbr[src, ports]
        hops[active] += 1
        finished = active[hops[active] == t_bar]
        sampled[finished] = colors[node[finished]]
        done[finished] = True
        key[heads] = r * n + head_nodes

        sends.append((movers, src, ports))
        sends_per_round.append(movers.size)
        max_received.append(int(np.bincount(node[movers], minlength=1).max()) if movers.size else 0)
        mx, mean, total = _queue_stats(node, n)
        fwd_max.append(mx)
        fwd_mean.append(mean)
        conserved &= total == n

    bwd_max, bwd_mean = [], []
    for movers, src, ports in reversed(sends):
        back = graph.rev[src, ports]
        node[movers] = graph.nbr[node[movers], back]
        mx, mean, total = _queue_stats(node, n)
        bwd_max.append(mx)
        bwd_mean.append(mean)
        conserved &= total == n

    returned = bool(np.array_equal(node, np.arange(n)))
    new_colors = colors.copy()
    new_colors[done] = update_rule_array(colors[done], sampled[done])
    stats = PhaseStats(
        max_congestion=int(max(fwd_max + bwd_max)),
        tokens_completed=int(done.sum()),
        all_returned=returned,
        tau=params.tau,
        t_bar=t_bar,
        active_rounds=r,
        forward_max=np.array(fwd_max),
        forward_mean=np.array(fwd_mean),
        backward_max=np.array(bwd_max, dtype=np.int64),
        backward_mean=np.array(bwd_mean),
        sends_per_round=np.array(sends_per_round, dtype=np.int64),
        max_received=np.array(max_received, dtype=np.int64),
        tokens_conserved=bool(conserved),
        _path=path,
        _hops=hops,
        _sampled=sampled,
    )
    return AgentStates(new_colors, states.k), stats


def run_expander(graph: RegularGraph, states: AgentStates, run_params: RunParams, phase_params: PhaseParams,
                 rng: np.random.Generator | None = None) -> RunTrace:
    """Repeat phases until consensus, all-undecided, or ``run_params.max_rounds`` phases.

    Trace rows are indexed by phase and carry the phase's congestion summary.
    """
    if rng is None:
        rng = np.random.default_rng(run_params.seed)
    initial = states.to_config()
    plurality = initial.plurality_label
    alpha = run_params.alpha_hint
    rows = [make_row(0, initial, alpha)]
    phase_log = []
    current = states
    phase = 0
    outcome = classify(initial, plurality)
    while outcome is None and phase < run_params.max_rounds:
        current, stats = run_phase(graph, current, phase_params, rng)
        phase += 1
        config = current.to_config()
        outcome = classify(config, plurality)
        phase_log.append(stats.to_dict())
        if outcome is not None or phase == run_params.max_rounds or phase <= 1 or phase % run_params.record_every == 0:
            rows.append(make_row(phase, config, alpha, max_congestion=stats.max_congestion,
                                 tokens_completed=stats.tokens_completed))
    final = current.to_config()
    extra = {"phases": phase_log, "rounds_per_phase": 2 * phase_params.tau}
    if outcome is None:
        return RunTrace(rows, Outcome(OutcomeKind.TIMEOUT), None, initial, run_params.seed, final, extra)
    return RunTrace(rows, outcome, phase, initial, run_params.seed, final, extra)
