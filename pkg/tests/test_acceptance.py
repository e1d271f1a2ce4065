"""End-to-end acceptance checks.  Each test prints one PASS/FAIL line through
the ``criterion`` fixture and asserts the stated threshold."""
import itertools
import math
import os
from fractions import Fraction

import numpy as np
import pytest

from undecided.analysis import check_monotonicity, plateau_persistence, plateau_target, sweep_md
from undecided.cli import main
from undecided.complete import AgentStates, OutcomeKind, RunParams, first_round_in_ranges, run, step
from undecided.config import (InitSpec, expected_next, gamma_drift, generate_initial, make_config, md,
                              oligarchic_family)
from undecided.expander import (PhaseParams, RegularGraph, congestion_bound, gen_regular_graph, mixing_time,
                                run_expander, run_phase)
from undecided.oracle import ConfigDistribution, enumerate_step_distribution, exact_step_distribution

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]


def test_expectation_formulas(criterion):
    rng = np.random.default_rng(2024)
    n, m = 10**4, 2000
    worst = 0.0
    for _ in range(10):
        k = int(rng.integers(2, 11))
        cuts = np.sort(rng.integers(0, n + 1, size=k))
        parts = np.diff(np.concatenate([[0], cuts, [n]]))
        c = make_config(parts[:k].tolist(), int(parts[k]))
        e = expected_next(c)
        draws = np.empty((m, k + 1))
        for i in range(m):
            nxt = step(c, rng)
            draws[i, :k] = nxt.by_label()
            draws[i, k] = nxt.q
        mu = [e.mu[c.labels.index(label)] for label in range(1, k + 1)] + [e.mu_q]
        se = draws.std(axis=0, ddof=1) / math.sqrt(m)
        dev = np.abs(draws.mean(axis=0) - mu)
        z = np.where(se > 0, dev / np.where(se > 0, se, 1), np.where(dev > 0, np.inf, 0))
        worst = max(worst, float(z.max()))
    ok = worst <= 4
    criterion("1 expectation formulas", ok, f"max |mean - mu| = {worst:.2f} standard errors (limit 4)")
    assert ok


ORACLE_FIXTURES = [((1, 1), 0), ((2, 1), 0), ((1, 1, 1), 0), ((2, 2), 0), ((3, 1, 1), 1), ((2, 2, 2), 0),
                   ((4, 2), 0), ((3, 2, 1), 0)]


def test_oracle_equivalence(criterion):
    rng = np.random.default_rng(99)
    tvs = []
    for counts, q in ORACLE_FIXTURES:
        c = make_config(counts, q)
        emp = ConfigDistribution.from_samples(step(c, rng) for _ in range(10**5))
        tvs.append(emp.tv(exact_step_distribution(c)))
    mismatches = 0
    checked = 0
    for k in range(1, 4):
        for n in range(1, 5):
            for parts in itertools.product(range(n + 1), repeat=k + 1):
                if sum(parts) != n:
                    continue
                c = make_config(parts[:k], parts[k])
                dp, brute = exact_step_distribution(c), enumerate_step_distribution(c)
                checked += 1
                if set(dp) != set(brute) or any(abs(dp[s] - p) > 1e-12 for s, p in brute.items()):
                    mismatches += 1
    ok = max(tvs) <= 0.01 and mismatches == 0
    criterion("2 oracle equivalence", ok,
              f"max TV {max(tvs):.4f} over {len(tvs)} fixtures (limit 0.01); DP vs enumeration "
              f"{mismatches} mismatches on {checked} configurations")
    assert ok


def test_first_round_ranges(criterion):
    c = generate_initial(InitSpec("uniform", n=10**5, k=50, alpha=0.2))
    hits = sum(all(first_round_in_ranges(c, step(c, np.random.default_rng(s)))) for s in range(100))
    ok = hits >= 95
    criterion("3 first-round ranges", ok, f"{hits}/100 runs in both ranges (need 95)")
    assert ok


def random_biased_config(rng):
    alpha = Fraction(int(rng.integers(1, 200)), 100)
    k = int(rng.integers(1, 12))
    others = rng.integers(0, 1000, size=k - 1).tolist()
    floor = math.ceil((1 + alpha) * max(others, default=0))
    c1 = max(1, floor + int(rng.integers(0, 500)))
    q = int(rng.integers(0, 3000)) if rng.random() < 0.7 else 0
    return make_config([c1, *others], q), alpha


def test_drift_inequality(criterion):
    rng = np.random.default_rng(7)
    violations = 0
    for _ in range(10**4):
        c, alpha = random_biased_config(rng)
        drift = gamma_drift(c, alpha, exact=True)
        assert drift.valid
        e = expected_next(c, exact=True)
        if (e.mu[0] + 2 * e.mu_q) / c.n < 1 + drift.value:
            violations += 1
    ok = violations == 0
    criterion("4 drift inequality", ok, f"{violations} exact violations in 10000 biased configurations")
    assert ok


def test_md_linearity(criterion):
    n = 10**5
    specs = oligarchic_family(n, 46, 0.2, [2, 4, 8, 16, 32])
    res = sweep_md(specs, list(range(50)), RunParams(), workers=os.cpu_count() or 1)
    mds = [r.md0 for r in res.rows]
    times = [r.mean_rounds for r in res.rows]
    increasing = all(a < b for a, b in zip(times, times[1:]))
    corr = res.corr_time_vs_md_log_n
    lower = all(t >= m / 8 for t, m in zip(times, mds))
    ok = increasing and corr is not None and corr >= 0.95 and lower
    pts = ", ".join(f"md {m:.2f}: T {t:.1f}" for m, t in zip(mds, times))
    criterion("5 md linearity", ok, f"{pts}; increasing={increasing}, corr={corr:.4f} (need 0.95), "
                                    f"T >= md/8 everywhere={lower}")
    assert ok


def test_plateau_persistence(criterion):
    gamma = 4.0
    c = generate_initial(InitSpec("uniform", n=10**5, k=32, alpha=0.2))
    target = plateau_target(md(c), gamma)
    lengths = [plateau_persistence(run(c, RunParams(seed=s)), gamma) for s in range(100)]
    hits = sum(1 for x in lengths if x is not None and x >= target)
    ok = hits >= 90
    observed = [x for x in lengths if x is not None]
    criterion("6 plateau persistence", ok,
              f"{hits}/100 runs persist >= {target} rounds (md0 {md(c):.2f}; need 90); "
              f"observed persistence min {min(observed)}, median {int(np.median(observed))}")
    assert ok


def test_monotonicity_audit(criterion):
    c = generate_initial(InitSpec("uniform", n=10**5, k=10, alpha=0.2))
    eligible = violations = 0
    for s in range(30):
        rep = check_monotonicity(run(c, RunParams(seed=s)))
        eligible += rep.eligible
        violations += rep.violations
    frac = violations / eligible
    ok = eligible > 0 and frac <= 0.01
    criterion("7 monotonicity audit", ok, f"{violations}/{eligible} eligible steps violate ({frac:.2%}, limit 1%)")
    assert ok


def fixture_graphs():
    k4 = RegularGraph.from_edges(4, list(itertools.combinations(range(4), 2)))
    cycles = [RegularGraph.from_edges(n, [(i, (i + 1) % n) for i in range(n)]) for n in (5, 9, 16)]
    outer = [(i, (i + 1) % 5) for i in range(5)]
    petersen = RegularGraph.from_edges(10, outer + [(i, i + 5) for i in range(5)]
                                       + [(5 + i, 5 + (i + 2) % 5) for i in range(5)])
    cube = RegularGraph.from_edges(64, [(u, u ^ (1 << b)) for u in range(64) for b in range(6) if u < u ^ (1 << b)])
    rng = np.random.default_rng(8)
    randoms = [gen_regular_graph(n, d, rng) for n, d in ((32, 3), (128, 4), (256, 8))]
    return {"K4": k4, "C5": cycles[0], "C9": cycles[1], "C16": cycles[2], "Petersen": petersen, "Q6": cube,
            **{f"random({g.n},{g.d})": g for g in randoms}}


def test_mixing_time_inequality(criterion):
    graphs = fixture_graphs()
    failures = []
    for name, g in graphs.items():
        base = mixing_time(g, 1 / (2 * math.e))
        for eps in (0.3, 0.1, 0.01, 1e-3, 1e-6, 1 / g.n**2):
            if mixing_time(g, eps) > math.ceil(math.log(1 / eps)) * base:
                failures.append((name, eps))
    k4 = mixing_time(graphs["K4"], 1 / (2 * math.e))
    ok = not failures and k4 == 2
    criterion("8 mixing-time inequality", ok, f"{len(failures)} failures over {len(graphs)} graphs; tm(K4) = {k4}")
    assert ok


def test_expander_phase_invariants(criterion):
    conserved = returned = completed = within = 0
    worst_ratio = 0.0
    for s in range(100):
        rng = np.random.default_rng(s)
        g = gen_regular_graph(1024, 8, rng)
        params = PhaseParams.for_graph(g)
        states = AgentStates(rng.integers(0, 5, size=1024), 4)
        _, stats = run_phase(g, states, params, rng)
        bound = congestion_bound(params.tau, g.n, params.c)
        conserved += stats.tokens_conserved
        returned += stats.all_returned
        completed += stats.tokens_completed == g.n
        within += stats.max_congestion <= bound
        worst_ratio = max(worst_ratio, stats.max_congestion / bound)
    ok = conserved == 100 and returned == 100 and completed >= 99 and within == 100
    criterion("9 expander phase invariants", ok,
              f"conserved {conserved}/100, returned {returned}/100, all tokens done {completed}/100 (need 99), "
              f"congestion within bound {within}/100 (worst ratio {worst_ratio:.4f})")
    assert ok


def test_expander_consensus(criterion):
    config = generate_initial(InitSpec("uniform", n=1024, k=4, alpha=0.2))
    wins = 0
    outcomes = {}
    for s in range(100):
        rng = np.random.default_rng(s)
        g = gen_regular_graph(1024, 8, rng)
        params = PhaseParams.for_graph(g)
        states = AgentStates.from_config(config, rng)
        trace = run_expander(g, states, RunParams(seed=s), params, rng)
        outcomes[trace.outcome.kind] = outcomes.get(trace.outcome.kind, 0) + 1
        wins += trace.outcome.kind is OutcomeKind.PLURALITY_WIN
    # reference: the same start under the complete-graph dynamics the protocol emulates
    ref = sum(run(config, RunParams(seed=s)).outcome.kind is OutcomeKind.PLURALITY_WIN for s in range(4000)) / 4000
    ok = wins >= 95
    tally = ", ".join(f"{k.value}: {v}" for k, v in sorted(outcomes.items(), key=lambda kv: kv[0].value))
    criterion("10 expander consensus", ok, f"plurality won {wins}/100 (need 95); {tally}; "
                                           f"complete-graph win rate from this start {ref:.3f}")
    assert ok


DETERMINISM_RUNS = {
    "simulate-complete": ["--n", "20000", "--k", "5", "--alpha", "0.2"],
    "phases": ["--n", "20000", "--k", "8", "--alpha", "0.2"],
    "simulate-expander": ["--n", "128", "--k", "3", "--alpha", "0.5", "--degree", "6"],
    "oracle": ["--counts", "3,2,1"],
    "sweep": ["--n", "5000", "--k", "10", "--seeds", "0,1,2"],
}


def test_determinism(criterion, tmp_path, monkeypatch):
    differing = []
    for command, args in DETERMINISM_RUNS.items():
        snapshots = []
        for rep in ("a", "b"):
            d = tmp_path / command / rep
            d.mkdir(parents=True)
            monkeypatch.chdir(d)
            assert main([command, *args, "--seed", "17", "--out", "out"]) == 0
            out = d / "out"
            snapshots.append({p.relative_to(out).as_posix(): p.read_bytes() for p in out.rglob("*") if p.is_file()})
        if snapshots[0] != snapshots[1]:
            differing.append(command)
    ok = not differing
    criterion("11 determinism", ok, f"{len(DETERMINISM_RUNS) - len(differing)}/{len(DETERMINISM_RUNS)} modes "
                                    f"byte-identical" + (f"; differing: {differing}" if differing else ""))
    assert ok
