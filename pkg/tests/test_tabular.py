import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from exdm.errors import PreconditionUnmet, TooLarge
from exdm.tabular import (
    TabularMDP,
    bound_check,
    coverage_bound,
    deterministic_policy,
    entropy,
    enumerate_det_policies,
    in_hull,
    j_f,
    max_entropy_policy,
    occupancy,
    random_mdp,
    simplex_volume,
    simplex_volume_mc,
    soft_optimal_value,
    soft_policy_iteration,
    soft_policy_step_exact,
    state_transition,
    wendel_exact_1d,
    wendel_mc,
)


def series_occupancy(mdp, pi, n_terms=10_000):
    Pt = state_transition(mdp, pi).T
    d, term = np.zeros(mdp.S), mdp.rho0.copy()
    for k in range(n_terms):
        d += term
        term = mdp.gamma * (Pt @ term)
    return (1 - mdp.gamma) * d


def bandit(R, pi_d=(0.5, 0.5)):
    return TabularMDP(np.ones((1, len(R), 1)), [1.0], 0.0, R=[R]), np.array([pi_d])


def test_occupancy_fixtures():
    absorbing = TabularMDP(np.array([[[0, 1.0]], [[0, 1.0]]]), [1.0, 0.0], 0.9)
    np.testing.assert_allclose(occupancy(absorbing, [[1.0], [1.0]]), [0.1, 0.9])
    single = TabularMDP(np.ones((1, 1, 1)), [1.0], 0.7)
    np.testing.assert_allclose(occupancy(single, [[1.0]]), [1.0])
    cycle = TabularMDP(np.array([[[0, 1.0]], [[1.0, 0]]]), [1.0, 0.0], 0.5)
    np.testing.assert_allclose(occupancy(cycle, [[1.0], [1.0]]), [2 / 3, 1 / 3], atol=1e-14)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 5), st.integers(1, 3))
def test_occupancy_matches_series(seed, S, A):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(S, A, rng, gamma=float(rng.uniform(0, 0.99)))
    pi = rng.dirichlet(np.ones(A), size=S)
    d = occupancy(mdp, pi)
    np.testing.assert_allclose(d, series_occupancy(mdp, pi), atol=1e-8)
    assert abs(d.sum() - 1) < 1e-10 and d.min() >= -1e-10


def test_enumeration_counts_and_guard():
    rng = np.random.default_rng(0)
    assert len(enumerate_det_policies(random_mdp(2, 2, rng))[0]) == 4
    assert len(enumerate_det_policies(random_mdp(3, 2, rng))[0]) == 8
    with pytest.raises(TooLarge):
        enumerate_det_policies(random_mdp(7, 8, rng))


def test_mixed_policies_in_hull():
    rng = np.random.default_rng(1)
    for _ in range(100):
        mdp = random_mdp(3, 2, rng, gamma=0.8)
        _, occ = enumerate_det_policies(mdp)
        pi = rng.dirichlet(np.ones(2), size=3)
        assert in_hull(occupancy(mdp, pi), occ)
    assert not in_hull([0.9, 0.1], [[0.2, 0.8], [0.5, 0.5]])


def test_simplex_volume():
    assert simplex_volume(2) == math.sqrt(2)
    assert simplex_volume(3) == pytest.approx(0.8660254, abs=1e-7)
    rng = np.random.default_rng(2)
    for S in (2, 3, 4):
        est, _ = simplex_volume_mc(S, 400_000, rng)
        assert abs(est / simplex_volume(S) - 1) < 0.01


@pytest.mark.parametrize("M,target", [(2, 0.5), (4, 7 / 8)])
def test_wendel_1d(M, target):
    p, se = wendel_mc(2, M, 100_000, np.random.default_rng(M))
    assert abs(p - target) < 3 * se
    assert wendel_exact_1d(M) == target


def test_wendel_low_dimension():
    assert wendel_mc(4, 3, 1000, np.random.default_rng(0))[0] == 0.0


def test_hull_routes_agree():
    a = wendel_mc(3, 4, 2000, np.random.default_rng(5), method="angle")
    b = wendel_mc(3, 4, 2000, np.random.default_rng(5), method="lp")
    assert a == b


def test_bound_values():
    u, v, bound, pre = coverage_bound(2, 8)
    assert (u, v, pre) == (1.0, 0.5, True)
    assert bound == pytest.approx(1 - 64 / 256)
    assert coverage_bound(2, 2)[2] == pytest.approx(0.0)
    u3, _, _, pre3 = coverage_bound(3, 10)
    assert u3 == 1 / 8 and not pre3
    with pytest.raises(PreconditionUnmet):
        bound_check(3, 10, 1000, np.random.default_rng(0), strict=True)
    r = bound_check(2, 8, 100_000, np.random.default_rng(0))
    assert r.holds and abs(r.estimate - (1 - 2**-7)) < 3 * r.se


def test_bandit_soft_step():
    mdp, pd = bandit([1.0, 0.0])
    pi1 = soft_policy_step_exact(mdp, pd, pd, 1.0)
    np.testing.assert_allclose(pi1, [[math.e / (math.e + 1), 1 / (math.e + 1)]])
    mdp2, _ = bandit([math.log(2), 0.0])
    np.testing.assert_allclose(soft_policy_step_exact(mdp2, pd, pd, 1.0), [[2 / 3, 1 / 3]])
    assert np.abs(soft_policy_step_exact(mdp, pd, pd, 1e6) - pd).sum() / 2 < 1e-3
    assert soft_optimal_value(mdp, pd, 1.0) == pytest.approx(math.log((math.e + 1) / 2), abs=1e-12)
    assert j_f(mdp, pi1, pd, 1.0) == pytest.approx(math.log((math.e + 1) / 2), abs=1e-12)


def test_tiny_beta_does_not_overflow():
    mdp, pd = bandit([1000.0, 0.0])
    pi = soft_policy_step_exact(mdp, pd, pd, 1e-3)
    assert np.all(np.isfinite(pi)) and pi[0, 0] == 1.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([0.1, 1.0, 10.0]))
def test_policy_improvement_monotone(seed, beta):
    rng = np.random.default_rng(seed)
    S, A = int(rng.integers(1, 6)), int(rng.integers(1, 4))
    mdp = random_mdp(S, A, rng, gamma=float(rng.uniform(0, 0.95)))
    pd = rng.dirichlet(np.ones(A), size=S)
    _, js = soft_policy_iteration(mdp, pd, beta, 30)
    assert all(b >= a - 1e-9 for a, b in zip(js, js[1:]))
    assert js[-1] == pytest.approx(soft_optimal_value(mdp, pd, beta), abs=1e-6)


def test_max_entropy_basics():
    # symmetric two-state swap: every policy visits both states, the start is split evenly
    swap = TabularMDP(np.array([[[0, 1.0], [0, 1.0]], [[1.0, 0], [1.0, 0]]]), [0.5, 0.5], 0.9)
    r = max_entropy_policy(swap)
    assert r.entropy == pytest.approx(math.log(2), abs=1e-6)
    one = max_entropy_policy(random_mdp(3, 1, np.random.default_rng(0)))
    assert one.is_deterministic and one.vertex_attains


def test_max_entropy_dominates_vertices():
    rng = np.random.default_rng(3)
    for _ in range(5):
        mdp = random_mdp(3, 3, rng)
        r = max_entropy_policy(mdp)
        _, occ = enumerate_det_policies(mdp)
        assert r.entropy >= max(entropy(o) for o in occ) - 1e-7
        assert r.entropy <= math.log(3) + 1e-9
