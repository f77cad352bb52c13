"""Closed-loop simulation: plan at the current state, act, step the environment.

Every step ``t`` of trial key ``k`` draws from three sibling streams
``k/t/planner``, ``k/t/action`` and ``k/t/environment``.  A step's
randomness therefore never depends on how many draws earlier steps made,
which keeps trajectories replayable under any trial scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .adaptive import TunerState, tuner_step
from .errors import BudgetError, ContractError, UsageError
from .grid import GridCache, GridParams, estimate_q_grid
from .mdp import GenerativeModel
from .policy import action_from_uniform, boltzmann
from .sparse import DEFAULT_BUDGET_CAP, SparseParams, estimate_q
from .stability import LyapunovSpec
from .streams import ACTION, ENVIRONMENT, PLANNER, StreamKey, rekey
from .trajectory import TrajectoryRecord


class Policy:
    """Chooses an action from the current state and two per-step generators."""

    name = "policy"

    def act(self, model: GenerativeModel, s: np.ndarray, planner_rng, action_rng,
            budget: int | None = None) -> tuple[int, int]:
        """Return ``(action, simulator calls spent)``, spending at most ``budget``."""
        raise NotImplementedError


class UniformPolicy(Policy):
    name = "uniform"

    def act(self, model, s, planner_rng, action_rng, budget=None):
        A = model.action_count
        return min(int(action_rng.random() * A), A - 1), 0


class ServeLongestPolicy(Policy):
    name = "serve_longest"

    def act(self, model, s, planner_rng, action_rng, budget=None):
        return int(np.argmax(s)), 0


@dataclass
class PlannerPolicy(Policy):
    """Boltzmann sampling over sparse-sampling Q estimates.

    ``reuse_cache`` keeps one grid cache for the whole trajectory instead of
    starting each query empty.  That changes the estimator, so it is off by
    default and recorded in run metadata when used.
    """

    oracle: str
    params: GridParams | SparseParams
    tau: float
    reuse_cache: bool = False
    name: str = field(default="planner", init=False)
    _cache: GridCache | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.oracle not in ("grid", "vanilla"):
            raise UsageError(f"unknown oracle {self.oracle!r}")
        if self.oracle == "grid" and not isinstance(self.params, GridParams):
            raise UsageError("grid oracle needs GridParams")
        if not self.tau > 0:
            raise UsageError("tau must be positive")

    def q_values(self, model, s, planner_rng, budget=DEFAULT_BUDGET_CAP):
        if self.oracle == "vanilla":
            return estimate_q(model, s, self.params, planner_rng, budget_cap=budget)
        if self._cache is None:
            self._cache = GridCache(model.dimension, model.action_count,
                                    self.params.width, self.params.epsilon)
        if not self.reuse_cache:
            # same as a fresh cache, without reallocating it every step
            self._cache.reset()
        return estimate_q_grid(model, s, self.params, cache=self._cache, stream=planner_rng,
                               budget_cap=budget, check=False)

    def act(self, model, s, planner_rng, action_rng, budget=None):
        est = self.q_values(model, s, planner_rng, DEFAULT_BUDGET_CAP if budget is None else budget)
        probs = boltzmann(est.values, self.tau)
        return action_from_uniform(probs, action_rng.random()), est.samples_used


def _truncate(rec_arrays, n_rows):
    states, actions, rewards, deltas, samples = (x[:n_rows].copy() for x in rec_arrays)
    actions[-1] = -1
    rewards[-1] = math.nan
    samples[-1] = 0
    return states, actions, rewards, deltas, samples


def closed_loop(model: GenerativeModel, policy, s0=None, horizon: int = 1000,
                key: StreamKey | int = 0, spec: LyapunovSpec | None = None,
                tuner: TunerState | None = None, delta: float = 1.0,
                budget_cap: int | None = None, meta: dict | None = None, **header):
    """Simulate one trajectory of ``horizon`` steps.

    Args:
        policy: a :class:`Policy`, or with ``tuner`` a callable mapping the
            current delta to one.
        s0: initial state, zeros by default.
        key: trial stream key (an int is taken as the seed).
        tuner: enables delta halving; the return value becomes
            ``(record, final TunerState)``.
        delta: recorded in the delta column when there is no tuner.
        budget_cap: limit on planner simulator calls over the whole
            trajectory; each query may spend only what is left.
        header: ``env``, ``seed``, ``trial``, ``config_hash`` for the record.

    Raises:
        BudgetError: a planner query would overrun the remaining budget.
            ``.step`` holds the step index and ``.partial`` the trajectory
            up to that state.
        ContractError: a reward left ``[0, r_max]``; carries ``.step`` and
            ``.partial`` the same way.
    """
    if horizon < 0:
        raise UsageError("horizon must be nonnegative")
    if isinstance(key, (int, np.integer)):
        key = StreamKey(int(key))
    spec = spec or LyapunovSpec()
    d = model.dimension
    s = model.check_state(np.zeros(d) if s0 is None else s0).copy()

    states = np.empty((horizon + 1, d))
    actions = np.full(horizon + 1, -1, dtype=np.int64)
    rewards = np.full(horizon + 1, math.nan)
    deltas = np.empty(horizon + 1)
    samples = np.zeros(horizon + 1, dtype=np.int64)
    arrays = (states, actions, rewards, deltas, samples)

    gens = [StreamKey(0).generator() for _ in range(3)]
    g_plan, g_act, g_env = gens
    policies = {}

    def current_policy(dl):
        if tuner is None or isinstance(policy, Policy):
            return policy
        if dl not in policies:
            policies.clear()
            policies[dl] = policy(dl)
        return policies[dl]

    header = {"env": model.name, "seed": key.seed, **header}
    n_rows = horizon + 1
    status = "ok"
    state_t = tuner
    spent = 0
    for t in range(horizon):
        dl = state_t.delta if state_t is not None else delta
        states[t] = s
        deltas[t] = dl
        step_key = key.child(t)
        rekey(g_plan, step_key.child(PLANNER))
        rekey(g_act, step_key.child(ACTION))
        rekey(g_env, step_key.child(ENVIRONMENT))
        try:
            left = None if budget_cap is None else budget_cap - spent
            a, used = current_policy(dl).act(model, s, g_plan, g_act, budget=left)
            nxt, r = model.step_batch(s[None, :], np.array([a], dtype=np.int64), g_env)
            model.check_rewards(r)
        except (BudgetError, ContractError) as err:
            cols = _truncate(arrays, t + 1)
            err.step = t
            status = "budget" if isinstance(err, BudgetError) else "contract"
            err.partial = _record(cols, spec, status=status, horizon=horizon, meta=meta, **header)
            raise
        actions[t] = a
        rewards[t] = r[0]
        samples[t] = used
        spent += used
        s = nxt[0]
        if state_t is not None and t >= 1:
            state_t = tuner_step(state_t, t, states[t])
            if state_t.halted:
                status = state_t.status
                n_rows = t + 2
                states[t + 1] = s
                deltas[t + 1] = dl
                break
    else:
        states[horizon] = s
        deltas[horizon] = state_t.delta if state_t is not None else delta

    cols = _truncate(arrays, n_rows) if n_rows < horizon + 1 else (states, actions, rewards, deltas, samples)
    rec = _record(cols, spec, status=status, horizon=horizon, meta=meta, **header)
    return (rec, state_t) if tuner is not None else rec


def _record(cols, spec, status, horizon, meta=None, **header):
    states, actions, rewards, deltas, samples = cols
    return TrajectoryRecord(states, actions, rewards, spec(states), deltas, samples,
                            status=status, horizon=horizon, meta=dict(meta or {}), **header)
