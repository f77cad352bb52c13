import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import binomtest

from stableplan.environments import DeterministicChain, QueueNetwork, exact_q
from stableplan.errors import BudgetError, UsageError
from stableplan.grid import GridParams, estimate_q_grid
from stableplan.sparse import SparseParams, estimate_q, horizon_for, sparse_params
from stableplan.streams import StreamKey


def test_horizon_gamma_09_delta_01():
    # ln 0.1 / ln 0.9 = 21.854...
    assert sparse_params(0.1, 0.9, 2).horizon == 22


def test_width_hand_arithmetic():
    p = sparse_params(0.5, 0.5, 2)
    # scale = 2*0.25/(0.25*0.25) = 8; inner = 2*1*ln(8*2*1) + ln(4)
    assert p.horizon == 1
    assert 8 * (2 * math.log(16) + math.log(4)) == pytest.approx(55.45, abs=0.01)
    assert p.width == 56


@given(st.floats(1e-6, 0.999), st.floats(0.01, 0.999))
@settings(max_examples=300, deadline=None)
def test_horizon_reaches_delta(delta, gamma):
    H = horizon_for(delta, gamma)
    assert gamma ** H <= delta
    assert H == 1 or gamma ** (H - 1) > delta


@pytest.mark.parametrize("delta, gamma", [(1.0, 0.5), (1.5, 0.5), (0.1, 1.0), (0.1, 0.0), (0.0, 0.5)])
def test_domain_errors(delta, gamma):
    with pytest.raises(UsageError):
        sparse_params(delta, gamma, 2)


def test_self_loop_three_levels():
    m = DeterministicChain(rewards=(1.0,), stride=0.0, gamma=0.5, action_count=2)
    est = estimate_q(m, [0.0], SparseParams(gamma=0.5, horizon=3, width=1), StreamKey(0))
    assert est.values.tolist() == [1.75, 1.75]


def test_single_level_is_mean_reward(small_mdp):
    p = SparseParams(gamma=0.6, horizon=1, width=7)
    est = estimate_q(small_mdp, [1.0], p, StreamKey(2))
    assert np.allclose(est.values, small_mdp.R[1], rtol=0, atol=1e-12)
    assert est.samples_used == 2 * 7


@given(st.lists(st.floats(0, 1), min_size=1, max_size=5), st.integers(0, 3),
       st.integers(1, 6), st.floats(0.05, 0.95), st.integers(1, 3))
@settings(max_examples=80, deadline=None)
def test_exact_on_deterministic_chains(rewards, stride, H, gamma, A):
    m = DeterministicChain(rewards=rewards, stride=stride, gamma=gamma, action_count=A, r_max=1.0)
    C = 2 if (A * 2) ** H <= 5000 else 1
    est = estimate_q(m, [0.0], SparseParams(gamma=gamma, horizon=H, width=C), StreamKey(1))
    assert np.allclose(est.values, m.discounted_sum([0.0], H), rtol=0, atol=1e-12)


@pytest.mark.parametrize("H, C, A", [(1, 3, 2), (2, 2, 2), (3, 2, 1), (3, 1, 3)])
def test_sample_accounting(H, C, A):
    m = DeterministicChain(stride=1.0, action_count=A)
    est = estimate_q(m, [0.0], SparseParams(gamma=0.5, horizon=H, width=C), StreamKey(0))
    ac = A * C
    assert est.samples_used == ac * (1 + sum(ac ** h for h in range(1, H)))
    assert est.samples_used == ac * est.expansions


@given(st.integers(0, 10_000), st.integers(1, 3), st.integers(1, 4))
@settings(max_examples=40, deadline=None)
def test_range_and_determinism(seed, H, C):
    m = QueueNetwork()
    p = SparseParams(gamma=0.9, horizon=H, width=C)
    a = estimate_q(m, [2.0, 1.0], p, StreamKey(seed))
    b = estimate_q(m, [2.0, 1.0], p, StreamKey(seed))
    assert np.array_equal(a.values, b.values) and a.samples_used == b.samples_used
    upper = m.r_max * (1 - 0.9 ** H) / (1 - 0.9)
    assert np.all(a.values >= 0) and np.all(a.values <= upper + 1e-12)


def test_budget_fails_fast():
    m = QueueNetwork()
    p = SparseParams(gamma=0.9, horizon=4, width=10)
    with pytest.raises(BudgetError) as info:
        estimate_q(m, [0.0, 0.0], p, StreamKey(0), budget_cap=1000)
    assert info.value.projected == p.projected_samples(2) > 1000


def test_matches_grid_oracle_at_depth_one(small_mdp):
    # one level: no snapping or memo reuse, same draws in the same order
    for seed in range(20):
        v = estimate_q(small_mdp, [0.0], SparseParams(0.6, 1, 9), StreamKey(seed))
        g = estimate_q_grid(small_mdp, [0.0], GridParams(0.6, 1, 9, 1.0), stream=StreamKey(seed))
        assert np.allclose(v.values, g.values, rtol=0, atol=1e-12)
    qn = QueueNetwork()
    for seed in range(20):
        v = estimate_q(qn, [3.0, 2.0], SparseParams(0.9, 1, 25), StreamKey(seed))
        g = estimate_q_grid(qn, [3.0, 2.0], GridParams(0.9, 1, 25, 1.0), stream=StreamKey(seed))
        assert np.allclose(v.values, g.values, rtol=0, atol=1e-12)


def _errors(mdp, q_star, H, C, seeds):
    p = SparseParams(gamma=mdp.gamma, horizon=H, width=C)
    return np.array([np.abs(estimate_q(mdp, [0.0], p, StreamKey(s, (H, C))).values - q_star[0]).max()
                     for s in seeds])


def test_concentration_reduced_scale(small_mdp):
    q_star = exact_q(small_mdp, 1e-13)
    lo = _errors(small_mdp, q_star, 2, 8, range(200))
    hi = _errors(small_mdp, q_star, 2, 32, range(200))
    assert np.median(hi) < np.median(lo)
    assert binomtest(int((hi < lo).sum()), 200, 0.5, alternative="greater").pvalue < 0.05


def test_truncation_bias_bound(small_mdp):
    q_star = exact_q(small_mdp, 1e-13)
    H, n = 3, 300
    p = SparseParams(gamma=0.6, horizon=H, width=6)
    ests = np.array([estimate_q(small_mdp, [0.0], p, StreamKey(s)).values for s in range(n)])
    se = ests.std(axis=0, ddof=1) / np.sqrt(n)
    gap = np.abs(ests.mean(axis=0) - q_star[0])
    assert np.all(gap <= 0.6 ** H * small_mdp.v_max + 3 * se)
