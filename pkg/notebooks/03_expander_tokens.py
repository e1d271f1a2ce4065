"""Token phases on a random regular graph.

Each agent sends a token on a lazy random walk, queues are FIFO, and the
walk is replayed backwards so every token returns home with a sample.
"""
import numpy as np

from undecided.complete import AgentStates, RunParams
from undecided.config import InitSpec, generate_initial
from undecided.expander import PhaseParams, congestion_bound, gen_regular_graph, mixing_time, run_expander, run_phase

rng = np.random.default_rng(3)
g = gen_regular_graph(1024, 8, rng)
print("connected:", g.is_connected())
print("t_mix(1/(2e)) =", mixing_time(g, 1 / (2 * np.e)), " t_mix(1/n^2) =", mixing_time(g, 1 / g.n**2))

params = PhaseParams.for_graph(g)
print("phase parameters:", params.to_dict())

config = generate_initial(InitSpec("uniform", n=1024, k=4, alpha=0.2))
states = AgentStates.from_config(config, rng)
_, stats = run_phase(g, states, params, rng)
print(f"one phase: {stats.active_rounds} busy rounds of {params.tau}, max queue {stats.max_congestion}"
      f" (bound {congestion_bound(params.tau, g.n, params.c):.0f}), all home: {stats.all_returned}")

trace = run_expander(g, states, RunParams(seed=3), params, rng)
print("\ncolor counts, largest first")
print("phase" + "".join(f"{i:>6}" for i in range(1, 5)) + "     q")
for row in trace.rows:
    print(f"{row.round:5d}", " ".join(f"{x:5d}" for x in row.counts), f"{row.q:5d}")
print("outcome:", trace.outcome)
