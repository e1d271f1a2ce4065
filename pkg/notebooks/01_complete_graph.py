"""Undecided-state dynamics on the complete graph.

Runs one trajectory from a biased start and prints how the undecided mass,
the plurality and R evolve, then the phase boundaries found in the trace.
"""
from undecided.analysis import detect_phases
from undecided.complete import RunParams, run
from undecided.config import InitSpec, big_r, generate_initial, md, rr

spec = InitSpec("uniform", n=10**6, k=20, alpha=0.2)
c0 = generate_initial(spec)
print(f"start: n={c0.n} k={c0.k} c1={c0.counts[0]} c2={c0.counts[1]}")
print(f"md={md(c0):.3f} R={big_r(c0):.3f} rr={rr(c0):.3f}")

trace = run(c0, RunParams(seed=1))
print(f"\n{'round':>5} {'q/n':>7} {'c1/n':>7} {'R':>8}")
for row in trace.rows:
    if row.round < 10 or row.round % 10 == 0 or row is trace.rows[-1]:
        r = f"{row.R:8.3f}" if row.R is not None else "       -"
        print(f"{row.round:5d} {row.q / c0.n:7.4f} {row.counts[0] / c0.n:7.4f} {r}")

print("\noutcome:", trace.outcome, "after", trace.convergence_round, "rounds")
b = detect_phases(trace)
print("phases:", b.to_dict())
