import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from undecided.config import (ColorConfiguration, InitSpec, big_r, expected_next, gamma_drift, generate_initial,
                              make_config, md, oligarchic_family, rr)
from undecided.errors import ParameterError, SpecError, UndefinedMetricError, ValidationError


def test_make_config_sorts_and_records_labels():
    c = make_config([2, 4, 2], 0)
    assert c.counts == (4, 2, 2)
    assert c.n == 8
    assert c.plurality_label == 2
    assert c.by_label() == (2, 4, 2)


def test_make_config_single_color_and_all_undecided():
    mono = make_config([5])
    assert mono.k == 1 and mono.is_monochromatic
    stalled = make_config([0, 0], 3)
    assert stalled.counts == (0, 0) and stalled.q == 3 and stalled.n == 3
    assert stalled.is_all_undecided


@pytest.mark.parametrize("counts, q", [([], 0), ([-1, 2], 0), ([1, 2], -3), ([1.5], 0), ([2**62, 1], 0)])
def test_make_config_rejects(counts, q):
    with pytest.raises(ValidationError):
        make_config(counts, q)


def test_metrics_on_small_example():
    c = make_config([4, 2, 2])
    assert md(c) == pytest.approx(1.5)
    assert big_r(c) == pytest.approx(2.0)
    assert rr(c) == pytest.approx(8 / 3)


def test_metrics_on_monochromatic():
    c = make_config([7, 0, 0])
    assert md(c) == big_r(c) == rr(c) == 1.0


def test_metrics_on_uniform():
    k = 5
    c = make_config([20] * k)
    assert md(c) == pytest.approx(k)
    assert rr(c) == pytest.approx(k)


def test_big_r_counts_only_colored_agents():
    assert big_r(make_config([3, 3], 2)) == pytest.approx(2.0)


def test_metrics_undefined_without_colored_agents():
    c = make_config([0, 0], 4)
    for f in (md, big_r, rr):
        with pytest.raises(UndefinedMetricError):
            f(c)


def test_expected_next_examples():
    e = expected_next(make_config([2, 2]))
    assert e.mu == pytest.approx((1.0, 1.0))
    assert e.mu_q == pytest.approx(2.0)
    e = expected_next(make_config([9]))
    assert e.mu == (9.0,) and e.mu_q == 0.0


def test_expected_next_initial_identities():
    c = make_config([50, 30, 15, 5])
    e = expected_next(c)
    assert e.mu[0] == pytest.approx(c.n / big_r(c) ** 2)
    assert e.mu_q == pytest.approx(c.n * (1 - 1 / rr(c)))


def test_gamma_drift_examples():
    assert gamma_drift(make_config([6]), 0.5).value == 0
    d = gamma_drift(make_config([2, 1, 1]), 1, exact=True)
    assert d.valid and d.value == Fraction(1, 2)


def test_drift_inequality_on_worked_example():
    # both sides evaluated exactly; this instance is tight
    c = make_config([2, 1, 1])
    e = expected_next(c, exact=True)
    lhs = (e.mu[0] + 2 * e.mu_q) / c.n
    assert lhs == Fraction(3, 2)
    assert lhs >= 1 + gamma_drift(c, 1, exact=True).value


def test_gamma_drift_flags_failed_hypothesis():
    d = gamma_drift(make_config([5, 5]), 0.2)
    assert not d.valid
    assert gamma_drift(make_config([0, 0], 3), 0.2) == (pytest.approx(math.nan, nan_ok=True), False)


@pytest.mark.parametrize("alpha", [0, -1])
def test_gamma_drift_rejects_nonpositive_alpha(alpha):
    with pytest.raises(ParameterError):
        gamma_drift(make_config([3, 1]), alpha)


def test_generate_uniform():
    c = generate_initial(InitSpec("uniform", n=100, k=4, alpha=0))
    assert c.counts == (25, 25, 25, 25) and c.q == 0


def test_generate_figure2_remainder_goes_to_plurality():
    c = generate_initial(InitSpec("figure2", n=64, k=4))
    assert c.counts == (40, 8, 8, 8)


def test_generate_custom_passthrough():
    c = generate_initial(InitSpec("custom", counts=(3, 2, 1)))
    assert c.by_label() == (3, 2, 1) and c.n == 6


@pytest.mark.parametrize("spec", [
    InitSpec("uniform", n=10, k=2, alpha=100.0),
    InitSpec("uniform", n=3, k=5),
    InitSpec("custom", counts=(3, 3), alpha=0.2),
    InitSpec("oligarchic", n=100, k=4, alpha=0.1, elite=9),
    InitSpec("bogus", n=10, k=2),
])
def test_generate_rejects_infeasible(spec):
    with pytest.raises(SpecError):
        generate_initial(spec)


@pytest.mark.parametrize("kind, extra", [("uniform", {}), ("oligarchic", {"elite": 3})])
@pytest.mark.parametrize("n, k, alpha", [(1000, 5, 0.2), (10**5, 46, 0.2), (777, 10, 1.5)])
def test_generated_bias_and_conservation(kind, extra, n, k, alpha):
    c = generate_initial(InitSpec(kind, n=n, k=k, alpha=alpha, **extra))
    assert c.n == n and c.q == 0 and c.k == k
    assert all(c.counts[0] >= (1 + alpha) * x for x in c.counts[1:])


def test_generate_with_rng_permutes_labels_only():
    spec = InitSpec("uniform", n=1000, k=6, alpha=0.5)
    plain = generate_initial(spec)
    shuffled = generate_initial(spec, np.random.default_rng(3))
    assert shuffled.counts == plain.counts
    assert sorted(shuffled.labels) == list(range(1, 7))


def test_oligarchic_family_spans_md_ladder():
    specs = oligarchic_family(10**5, 46, 0.2, [2, 4, 8, 16, 32])
    mds = [md(generate_initial(s)) for s in specs]
    assert mds == sorted(mds)
    assert mds[-1] / mds[0] >= 8


def test_json_roundtrip():
    c = make_config([2, 4, 2], 3)
    assert ColorConfiguration.from_dict(c.to_dict()) == c
    assert c.to_dict() == {"counts": [2, 4, 2], "q": 3}
    spec = InitSpec("oligarchic", n=1000, k=10, alpha=0.2, elite=3)
    assert InitSpec.from_dict(spec.to_dict()) == spec
    custom = InitSpec("custom", counts=(3, 2, 1))
    assert InitSpec.from_dict(custom.to_dict()).counts == (3, 2, 1)


configurations = st.lists(st.integers(0, 10**6), min_size=1, max_size=12).flatmap(
    lambda counts: st.tuples(st.just(counts), st.integers(0, 10**6))
).filter(lambda t: max(t[0]) > 0)


@settings(max_examples=300, deadline=None)
@given(configurations)
def test_metric_bounds(cq):
    counts, q = cq
    c = make_config(counts, q)
    k = c.k
    tol = 1e-12 * k
    assert 1 - tol <= big_r(c) <= k + tol
    assert 1 - tol <= md(c) <= k + tol
    assert rr(c) <= k + tol
    if sum(1 for x in counts if x) == 1:
        assert md(c) == 1
    else:
        assert md(c) > 1


@settings(max_examples=300, deadline=None)
@given(configurations)
def test_conservation_and_expectation(cq):
    counts, q = cq
    c = make_config(counts, q)
    assert sum(c.counts) + c.q == c.n
    e = expected_next(c)
    assert sum(e.mu) + e.mu_q == pytest.approx(c.n, rel=1e-9, abs=1e-9)
    assert min(e.mu) >= 0 and e.mu_q >= 0
    assert sorted(c.by_label(), reverse=True) == list(c.counts)
    assert make_config(c.by_label(), c.q) == c
