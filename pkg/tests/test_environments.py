import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stableplan.environments import (
    FiniteMdp, QueueConfig, QueueNetwork, ReflectedWalk, TwoQueueConfig, bellman_residual,
    euclidean_lyapunov, exact_q, reflected_walk_step, rollout, serve_longest,
    serve_longest_actions, single_action, two_queue_step)
from stableplan.errors import UsageError
from stableplan.streams import StreamKey


def _forced(model, q, a, u):
    nxt, r = model.transition(np.array([q], float), np.array([a]), np.array([u], float))
    return nxt[0].tolist(), float(r[0])


@pytest.mark.parametrize("scale", [1.0, 2.5])
def test_forced_draws_serve_and_arrive(scale):
    m = QueueNetwork(TwoQueueConfig(reward_scale=scale))
    # service succeeds, no arrival at queue 0, arrival at queue 1
    assert _forced(m, [3, 1], 0, [0.0, 0.99, 0.0]) == ([2.0, 2.0], pytest.approx(scale / 5))


def test_serving_empty_queue_wastes_slot():
    m = QueueNetwork()
    assert _forced(m, [0, 5], 0, [0.0, 0.99, 0.99]) == ([0.0, 5.0], pytest.approx(1 / 6))


def test_idle_system():
    assert _forced(QueueNetwork(), [0, 0], 1, [0.5, 0.99, 0.99]) == ([0.0, 0.0], 1.0)


def test_two_queue_step_validates_state():
    with pytest.raises(UsageError):
        two_queue_step(QueueConfig(), [1.5, 0], 0, StreamKey(0))
    with pytest.raises(UsageError):
        two_queue_step(QueueConfig(), [-1, 0], 0, StreamKey(0))


@pytest.mark.parametrize("rates", [(0.0, 0.5), (1.0, 0.5), (0.3, 1.2)])
def test_rates_must_be_open_unit(rates):
    with pytest.raises(UsageError):
        QueueConfig(arrival=rates)


def test_feasibility_flag():
    assert QueueConfig((0.3, 0.3), (0.8, 0.8)).feasible
    assert not QueueConfig((0.55, 0.4), (0.8, 0.8)).feasible


@pytest.mark.parametrize("q, expected", [((3, 1), 0), ((1, 3), 1), ((2, 2), 0)])
def test_serve_longest(q, expected):
    assert serve_longest(q) == expected


@pytest.mark.parametrize("q, expected", [((3, 4), 5.0), ((0, 0), 0.0), ((1, 1), 1.41421356)])
def test_euclidean_lyapunov(q, expected):
    assert euclidean_lyapunov(q) == pytest.approx(expected, abs=1e-8)


@given(st.lists(st.integers(0, 40), min_size=2, max_size=2), st.integers(0, 1),
       st.lists(st.floats(0, 1, exclude_max=True), min_size=3, max_size=3))
@settings(max_examples=300, deadline=None)
def test_queue_increments_bounded_and_integral(q, a, u):
    nxt, r = _forced(QueueNetwork(), q, a, u)
    assert all(x >= 0 and x == int(x) for x in nxt)
    step = np.linalg.norm(np.subtract(nxt, q))
    assert step <= np.sqrt(2) + 1e-12
    assert abs(euclidean_lyapunov(nxt) - euclidean_lyapunov(q)) <= np.sqrt(2) + 1e-12
    assert 0 < r <= 1.0


def test_walk_forced_moves():
    w = ReflectedWalk(0.4)
    assert _forced(w, [5], 0, [0.1])[0] == [6.0]
    assert _forced(w, [0], 0, [0.9])[0] == [0.0]
    s, r = reflected_walk_step(0.4, [2], StreamKey(0))
    assert s[0] in (1.0, 3.0) and r == pytest.approx(1 / 3)


def test_walk_mean_drift():
    # 10^6 steps spread over 1000 copies started high enough never to touch zero
    w = ReflectedWalk(0.4)
    traj = rollout(w, single_action, np.full((1000, 1), 5000.0), 1000, StreamKey(3))
    drift = np.diff(traj[:, :, 0], axis=0).mean()
    assert drift == pytest.approx(-0.2, abs=0.01)


def test_walk_stationary_tail_matches_geometric():
    w = ReflectedWalk(0.4)
    n = 20_000
    final = rollout(w, single_action, np.zeros((n, 1)), 600, StreamKey(4), record=[600])[0, :, 0]
    for b in range(1, 9):
        exact = w.stationary_tail(b)
        emp = (final >= b).mean()
        se = np.sqrt(exact * (1 - exact) / n)
        assert abs(emp - exact) <= 3 * se, (b, emp, exact)


def test_serve_longest_negative_drift():
    m = QueueNetwork()
    traj = rollout(m, serve_longest_actions, np.full((100, 2), 10.0), 10_000, StreamKey(5))
    L = np.linalg.norm(traj, axis=2)
    dL = np.diff(L, axis=0)
    mask = L[:-1] > 5
    assert mask.sum() > 1000
    assert dL[mask].mean() <= -0.05


def test_exact_q_single_state():
    m = FiniteMdp([[[1.0]]], [[1.0]], gamma=0.5)
    assert exact_q(m, 1e-12)[0, 0] == pytest.approx(2.0, abs=1e-11)


def test_exact_q_two_state_cycle():
    P = np.array([[[0.0, 1.0]], [[1.0, 0.0]]])
    q = exact_q(FiniteMdp(P, [[1.0], [0.0]], gamma=0.5), 1e-13)
    assert q[:, 0] == pytest.approx([4 / 3, 2 / 3], abs=1e-12)


@st.composite
def finite_mdps(draw):
    S = draw(st.integers(1, 4))
    A = draw(st.integers(1, 3))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    P = rng.random((S, A, S)) + 0.01
    P /= P.sum(axis=2, keepdims=True)
    R = rng.random((S, A))
    gamma = draw(st.floats(0.1, 0.95))
    return FiniteMdp(P, R, gamma)


@given(finite_mdps(), st.sampled_from([1e-6, 1e-9, 1e-11]))
@settings(max_examples=60, deadline=None)
def test_exact_q_residual_within_tol(mdp, tol):
    assert bellman_residual(mdp, exact_q(mdp, tol)) <= tol


def test_finite_mdp_rejects_non_stochastic_rows():
    with pytest.raises(UsageError):
        FiniteMdp([[[0.5, 0.4]], [[1.0, 0.0]]], [[0.0], [0.0]], gamma=0.5)


def test_finite_mdp_sampling_follows_rows(small_mdp):
    rng = StreamKey(9).generator()
    n = 200_000
    nxt, _ = small_mdp.step_batch(np.zeros((n, 1)), np.ones(n, dtype=np.int64), rng)
    freq = np.bincount(nxt[:, 0].astype(int), minlength=3) / n
    assert freq == pytest.approx(small_mdp.P[0, 1], abs=0.005)
