import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stableplan.environments import (QueueConfig, QueueNetwork, ReflectedWalk, rollout,
                                     serve_longest_actions, single_action, uniform_actions)
from stableplan.errors import ContractError, UsageError
from stableplan.stability import (LyapunovSpec, empirical_drift, empirical_tail, excursions,
                                  hajek_constants, hitting_time, mean_return_bound,
                                  return_time_bound, stability_verdict, tail_bound, tail_bound_raw)
from stableplan.streams import StreamKey
from stableplan.trajectory import TrajectoryRecord

WALK = LyapunovSpec(nu=1.0, nu_prime=1.0, B=0.0, alpha=0.2)


def test_constants_example():
    h = hajek_constants(WALK, 0.2)
    assert h.c == pytest.approx(math.e - 2, abs=1e-12)
    assert round(h.c, 6) == 0.718282
    assert h.eta == pytest.approx(0.2 / (2 * (math.e - 2)), rel=1e-12)
    assert round(h.eta, 6) == 0.139221 and round(h.rho, 6) == 0.986078


def test_statement_variant():
    h = hajek_constants(WALK, 0.2, variant="statement")
    assert h.rho == pytest.approx(1 - h.eta * 0.2 / (2 * h.c))


def test_large_drift_caps_eta():
    h = hajek_constants(1.0, 1.6)
    assert h.eta == 1.0 and h.rho == pytest.approx(1 - 0.8)
    with pytest.raises(UsageError):
        hajek_constants(1.0, 2.5)


@given(st.floats(0.05, 5.0), st.floats(1e-3, 1.9))
@settings(max_examples=1000, deadline=None)
def test_contraction_inequality(nu, alpha):
    h = hajek_constants(nu, alpha)
    assert 0 < h.eta <= 1 and 0 < h.rho < 1
    assert 1 - h.eta * alpha + h.eta ** 2 * h.c <= h.rho + 1e-15
    assert h.contraction_holds


def test_tail_bound_vacuous_at_start():
    h = hajek_constants(WALK, 0.2)
    assert tail_bound_raw(h, WALK, 10.0, 5.0, 0) >= 1.0
    assert tail_bound(h, WALK, 10.0, 5.0, 0) == 1.0


def test_tail_bound_walk_example():
    h = hajek_constants(WALK, 0.2)
    v = tail_bound(h, WALK, 0.0, 50.0, math.inf)
    assert v == pytest.approx(math.exp(1 - h.eta * 50) / (1 - h.rho), rel=1e-12)
    # hand value 0.1853 was computed with rounded intermediates
    assert v == pytest.approx(0.1853, abs=5e-4)


@given(st.floats(0.1, 3), st.floats(0.01, 1.0), st.floats(0, 50), st.floats(0, 100),
       st.integers(0, 10_000))
@settings(max_examples=300, deadline=None)
def test_tail_bound_monotone(nu, alpha, L0, b, t):
    spec = LyapunovSpec(nu=nu, alpha=alpha)
    try:
        h = hajek_constants(spec, alpha)
    except UsageError:
        return
    assert tail_bound_raw(h, spec, L0, b + 1, t) <= tail_bound_raw(h, spec, L0, b, t)
    bigger = LyapunovSpec(nu=nu * 1.5, alpha=alpha)
    h2 = hajek_constants(bigger, alpha)
    # the stationary term grows with nu even though eta shrinks, for b >= B + nu terms
    lim = tail_bound_raw(h, spec, L0, b, math.inf)
    assert lim == pytest.approx(math.exp(nu + h.eta * (spec.B - b)) / (1 - h.rho), rel=1e-12)
    assert tail_bound_raw(h2, bigger, 0.0, 0.0, math.inf) >= tail_bound_raw(h, spec, 0.0, 0.0, math.inf)


def test_return_time_examples():
    h = hajek_constants(WALK, 0.2)
    assert return_time_bound(h, WALK, 7.0, 7.0, 0) == 1.0
    b1, b2 = return_time_bound(h, WALK, 20, 5, 100), return_time_bound(h, WALK, 20, 5, 101)
    assert b2 / b1 == pytest.approx(h.rho, rel=1e-12)
    v = return_time_bound(h, WALK, 20.0, 5.0, 500)
    assert v == pytest.approx(math.exp(h.eta * 15) * h.rho ** 500, rel=1e-12)
    assert v == pytest.approx(0.00731, abs=5e-5)
    assert mean_return_bound(h, WALK, 20, 5) == pytest.approx(math.exp(h.eta * 15) / (1 - h.rho))


def test_return_level_below_threshold():
    spec = LyapunovSpec(B=3.0)
    h = hajek_constants(spec, 0.2)
    with pytest.raises(UsageError):
        return_time_bound(h, spec, 5.0, 2.0, 1)


def test_walk_drift_estimate():
    traj = rollout(ReflectedWalk(0.4), single_action, np.zeros((100, 1)), 10_000, StreamKey(21))
    L = [traj[:, i, 0] for i in range(100)]
    d = empirical_drift(L, WALK)
    assert d.estimate == pytest.approx(-0.2, abs=0.01)
    assert d.half_width < 0.01 and not d.increment_violation


def test_constant_trajectory_drift():
    d = empirical_drift(np.full(50, 4.0), WALK)
    assert d.estimate == 0.0 and d.n == 49
    assert empirical_drift(np.full(50, 0.0), WALK).n == 0


def test_increment_violation_flag():
    assert empirical_drift(np.array([0.0, 3.0, 1.0]), WALK).increment_violation


def test_empirical_tail_edges():
    trajs = [np.array([0.0, 1.0, 4.0]), np.array([0.0, 2.0, 2.0])]
    assert empirical_tail(trajs, 0.0, 2) == 1.0
    assert empirical_tail(trajs, 5.0, 2) == 0.0
    assert empirical_tail(trajs, 3.0, 2) == 0.5
    with pytest.raises(UsageError):
        empirical_tail(trajs, 1.0, 3)


def test_walk_tail_below_bound():
    h = hajek_constants(WALK, 0.2)
    n = 10_000
    final = rollout(ReflectedWalk(0.4), single_action, np.zeros((n, 1)), 1000, StreamKey(8),
                    record=[1000])[0, :, 0]
    for b in range(0, 30, 2):
        emp = empirical_tail([np.array([x]) for x in final], b, 0)
        assert emp <= tail_bound(h, WALK, 0.0, b, 1000)


def test_hitting_time_and_excursions():
    L = np.array([5, 4, 3, 2, 3, 4, 2, 1, 5, 6])
    assert hitting_time(L, 2) == 3
    assert hitting_time(L, 0) is None
    done, open_ = excursions(L, 3)
    # starts at t=0 (ends t=2), t=5 (ends t=6), t=8 (censored)
    assert done.tolist() == [2, 1] and open_ == 1


def test_norm_condition_checked():
    spec = LyapunovSpec(function="max", c1=1.0)
    with pytest.raises(ContractError):
        spec(np.array([[3.0, 4.0]]))
    assert spec(np.array([[3.0, 0.0]])).tolist() == [3.0]


def test_verdict_confined_process():
    rng = np.random.default_rng(0)
    trajs = [np.full(500, 3.0) for _ in range(20)]
    trajs += [np.minimum(3.0, rng.integers(3, 6, 500)).astype(float) for _ in range(5)]
    for theta in (0.01, 0.5, 0.99):
        rep = stability_verdict(trajs, WALK, theta=theta)
        assert rep.verdict == "stable"
        assert rep.boundedness_level == 3.0
        assert rep.recurrence["mean_return_time"] == 0


def test_verdict_inconclusive_without_data():
    assert stability_verdict([], WALK).verdict == "inconclusive"
    assert stability_verdict([np.zeros(3)], WALK).verdict == "inconclusive"


def test_verdict_rejects_bad_theta():
    with pytest.raises(UsageError):
        stability_verdict([np.zeros(100)], WALK, theta=1.0)


def _queue_trajs(arrival, policy, n, horizon, seed):
    m = QueueNetwork(QueueConfig(arrival, (0.8, 0.8)))
    states = rollout(m, policy, np.zeros((n, 2)), horizon, StreamKey(seed))
    L = np.linalg.norm(states, axis=2)
    return [L[:, i] for i in range(n)]


@pytest.mark.slow
def test_serve_longest_is_stable():
    trajs = _queue_trajs((0.3, 0.3), serve_longest_actions, 200, 50_000, 31)
    rep = stability_verdict(trajs, LyapunovSpec(nu=math.sqrt(2), alpha=0.1), theta=0.05)
    assert rep.verdict == "stable"
    assert rep.to_dict()["verdict"] == "stable"


def test_uniform_overloaded_is_not_stable():
    trajs = _queue_trajs((0.55, 0.1), uniform_actions(2), 50, 5_000, 32)
    rep = stability_verdict(trajs, LyapunovSpec(nu=math.sqrt(2), alpha=0.1), theta=0.05)
    assert rep.verdict == "not-stable"
    assert rep.boundedness_level is None


def test_report_serializes_records():
    recs = [TrajectoryRecord.from_states(np.zeros((30, 2))) for _ in range(3)]
    d = stability_verdict(recs, LyapunovSpec(), theta=0.1).to_dict()
    assert d["verdict"] == "stable" and d["drift"]["n"] == 0 and d["drift"]["estimate"] is None
