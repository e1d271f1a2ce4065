"""Convergence time against md.

A family of starts with the same n and bias but md from about 2 to 32;
mean convergence time grows roughly linearly in md.
"""
from undecided.analysis import sweep_md
from undecided.complete import RunParams
from undecided.config import oligarchic_family

specs = oligarchic_family(10**5, 46, 0.2, [2, 4, 8, 16, 32])
res = sweep_md(specs, range(20), RunParams())
print(f"{'md0':>7} {'mean T':>8} {'std':>6} {'plateau':>8} {'wins':>5}")
for r in res.rows:
    print(f"{r.md0:7.2f} {r.mean_rounds:8.1f} {r.std_rounds:6.1f} {r.plateau_mean:8.1f} {r.win_frequency:5.2f}")
print("\ncorrelation of mean T with md ln n:", round(res.corr_time_vs_md_log_n, 4))
