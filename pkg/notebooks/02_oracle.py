"""Exact one-step law and absorption probabilities for tiny populations.

The sampler is compared with the exact distribution, and the plurality's
winning chance is computed exactly as the bias grows.
"""
import numpy as np

from undecided.complete import step
from undecided.config import make_config
from undecided.oracle import ConfigDistribution, exact_absorption, exact_step_distribution

c = make_config([3, 2, 1])
exact = exact_step_distribution(c)
rng = np.random.default_rng(0)
for m in (10**3, 10**4, 10**5):
    emp = ConfigDistribution.from_samples(step(c, rng) for _ in range(m))
    print(f"{m:>7} samples: TV to exact law = {emp.tv(exact):.4f}")

print("\nplurality win probability, n = 10, two colors")
for c1 in range(5, 10):
    rep = exact_absorption(make_config([c1, 10 - c1]))
    print(f"  c = ({c1}, {10 - c1}): win {rep.probability_of_label(1):.4f}"
          f"  stall {rep.stall_probability:.4f}  E[T] {rep.expected_time:.2f}")
