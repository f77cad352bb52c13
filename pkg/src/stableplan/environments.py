"""Concrete generative models with known ground truth.

* :class:`QueueNetwork` - N Bernoulli queues sharing one server; the
  two-queue network is the motivating example.
* :class:`ReflectedWalk` - a +/-1 walk reflected at zero whose stationary
  tail is geometric, used to check the Hajek bounds.
* :class:`FiniteMdp` - tabular MDPs, solvable exactly with :func:`exact_q`.
* :class:`DeterministicChain` - ``s -> s + stride`` with tabulated rewards,
  for exactness checks and runaway-state experiments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import UsageError
from .mdp import GenerativeModel
from .streams import as_generator


@dataclass(frozen=True)
class QueueConfig:
    """Arrival and service probabilities for a single-server queue network.

    Each slot the server picks one queue; its head-of-line job leaves with
    probability ``service[i]``.  Then each queue independently receives an
    arrival with probability ``arrival[i]``.
    """

    arrival: tuple[float, ...] = (0.3, 0.3)
    service: tuple[float, ...] = (0.8, 0.8)
    reward_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "arrival", tuple(float(x) for x in self.arrival))
        object.__setattr__(self, "service", tuple(float(x) for x in self.service))
        if len(self.arrival) != len(self.service) or not self.arrival:
            raise UsageError("arrival and service must be non-empty and the same length")
        for x in self.arrival + self.service:
            if not 0.0 < x < 1.0:
                raise UsageError(f"rates must lie in (0, 1), got {x}")
        if not self.reward_scale > 0:
            raise UsageError("reward_scale must be positive")

    @property
    def load(self) -> float:
        return sum(l / m for l, m in zip(self.arrival, self.service))

    @property
    def feasible(self) -> bool:
        """True when some scheduling policy can keep the network stable."""
        return self.load < 1.0


def TwoQueueConfig(arrival=(0.3, 0.3), service=(0.8, 0.8), reward_scale=1.0) -> QueueConfig:
    cfg = QueueConfig(tuple(arrival), tuple(service), reward_scale)
    if len(cfg.arrival) != 2:
        raise UsageError("the two-queue network needs exactly two rates per list")
    return cfg


class QueueNetwork(GenerativeModel):
    """Discrete-time queue network; the action is which queue to serve.

    Within a slot departures happen before arrivals, serving an empty queue
    wastes the slot, and the reward ``reward_scale / (1 + total jobs)`` is
    read off the pre-step state.
    """

    kernel_kind = kernels.QUEUE

    def __init__(self, config: QueueConfig | None = None, gamma: float = 0.9):
        self.config = config or QueueConfig()
        if not 0.0 < gamma < 1.0:
            raise UsageError("gamma must lie in (0, 1)")
        n = len(self.config.arrival)
        self.name = "two_queue" if n == 2 else f"queue_network_{n}"
        self.dimension = n
        self.action_count = n
        self.gamma = gamma
        self.r_max = self.config.reward_scale
        self.n_uniforms = 1 + n
        self.state_increment_bound = float(np.sqrt(n))
        self.kernel_params = np.array(
            [n, *self.config.arrival, *self.config.service, self.config.reward_scale],
            dtype=np.float64,
        )

    def check_state(self, s):
        s = super().check_state(s)
        if np.any(s < 0) or np.any(s != np.floor(s)):
            raise UsageError(f"queue lengths must be nonnegative integers, got {s}")
        return s


class ReflectedWalk(GenerativeModel):
    """``s' = max(0, s + X)`` with ``X = +1`` w.p. ``p_up``, else ``-1``.

    Reward is ``1 / (1 + s)``.  For ``p_up < 1/2`` the walk satisfies the
    bounded-increment and drift conditions with ``nu = 1``, ``B = 0`` and
    ``alpha = 1 - 2 p_up`` under L(s) = s, and its stationary law is
    ``P(s >= b) = (p_up / (1 - p_up)) ** b``.
    """

    kernel_kind = kernels.WALK
    name = "reflected_walk"
    dimension = 1
    action_count = 1
    r_max = 1.0
    n_uniforms = 1
    state_increment_bound = 1.0

    def __init__(self, p_up: float = 0.4, gamma: float = 0.9):
        if not 0.0 < p_up < 1.0:
            raise UsageError("p_up must lie in (0, 1)")
        self.p_up = float(p_up)
        self.gamma = gamma
        self.kernel_params = np.array([self.p_up])

    @property
    def drift(self) -> float:
        return 2.0 * self.p_up - 1.0

    def stationary_tail(self, b):
        """Exact ``P(s >= b)`` under the stationary law (requires ``p_up < 1/2``)."""
        if self.p_up >= 0.5:
            raise UsageError("walk has no stationary law for p_up >= 1/2")
        return (self.p_up / (1.0 - self.p_up)) ** np.asarray(b, dtype=float)

    def check_state(self, s):
        s = super().check_state(s)
        if s[0] < 0 or s[0] != np.floor(s[0]):
            raise UsageError("walk state must be a nonnegative integer")
        return s


class FiniteMdp(GenerativeModel):
    """Tabular MDP with states ``0..n-1`` embedded as the points ``[i]`` of R^1."""

    kernel_kind = kernels.FINITE
    name = "finite_mdp"
    dimension = 1
    n_uniforms = 1

    def __init__(self, transitions, rewards, gamma: float, r_max: float | None = None):
        P = np.asarray(transitions, dtype=np.float64)
        R = np.asarray(rewards, dtype=np.float64)
        if P.ndim != 3 or P.shape[0] != P.shape[2] or R.shape != P.shape[:2]:
            raise UsageError("transitions must be (S, A, S) and rewards (S, A)")
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=2) - 1.0) > 1e-12):
            raise UsageError("every transition row must be a probability vector")
        if not 0.0 < gamma < 1.0:
            raise UsageError("gamma must lie in (0, 1)")
        if np.any(R < 0):
            raise UsageError("rewards must be nonnegative")
        self.P = P
        self.R = R
        self.n_states, self.action_count = R.shape
        self.gamma = gamma
        self.r_max = float(R.max()) if r_max is None else float(r_max)
        if R.max() > self.r_max:
            raise UsageError("r_max below the largest tabulated reward")
        cum = np.cumsum(P, axis=2)
        self.kernel_params = np.concatenate(
            [[self.n_states, self.action_count], cum.ravel(), R.ravel()]
        ).astype(np.float64)

    def check_state(self, s):
        s = super().check_state(s)
        if s[0] != np.floor(s[0]) or not 0 <= s[0] < self.n_states:
            raise UsageError(f"state index must be an integer in [0, {self.n_states})")
        return s


class DeterministicChain(GenerativeModel):
    """``s -> s + stride`` in every coordinate; reward ``rewards[s[0] mod len]``.

    ``stride=0`` gives a self-loop, ``stride=1`` a state that grows without
    bound.  All actions behave identically.
    """

    kernel_kind = kernels.CHAIN
    name = "chain"
    n_uniforms = 0

    def __init__(self, rewards=(1.0,), stride: float = 1.0, gamma: float = 0.5,
                 action_count: int = 1, dimension: int = 1, r_max: float | None = None):
        self.rewards = np.asarray(rewards, dtype=np.float64)
        if self.rewards.ndim != 1 or not len(self.rewards) or np.any(self.rewards < 0):
            raise UsageError("rewards must be a non-empty nonnegative sequence")
        self.stride = float(stride)
        self.gamma = gamma
        self.action_count = int(action_count)
        self.dimension = int(dimension)
        self.r_max = float(self.rewards.max()) if r_max is None else float(r_max)
        self.state_increment_bound = abs(self.stride) * np.sqrt(self.dimension)
        self.kernel_params = np.concatenate([[self.stride, len(self.rewards)], self.rewards])

    def discounted_sum(self, s0, horizon: int) -> float:
        """Exact ``sum_{h<H} gamma^h r_h`` along the chain from ``s0``."""
        total = 0.0
        s = float(np.asarray(s0, dtype=float).ravel()[0])
        for h in range(horizon):
            total += self.gamma ** h * self.rewards[int(s) % len(self.rewards)]
            s += self.stride
        return total


def two_queue_step(cfg: QueueConfig, q, a, stream, gamma: float = 0.9):
    """One slot of the queue network: serve queue ``a`` then admit arrivals."""
    from .mdp import step

    return step(QueueNetwork(cfg, gamma), q, a, stream)


def reflected_walk_step(p_up: float, s, stream):
    from .mdp import step

    return step(ReflectedWalk(p_up), s, 0, stream)


def serve_longest(q) -> int:
    """Index of the longest queue, ties broken toward the lowest index."""
    return int(np.argmax(np.asarray(q)))


def euclidean_lyapunov(q):
    """l2 norm of the state; works row-wise on 2-D input."""
    return np.linalg.norm(np.asarray(q, dtype=np.float64), axis=-1)


def exact_q(mdp: FiniteMdp, tol: float = 1e-10, max_iter: int = 100_000) -> np.ndarray:
    """Q* by value iteration, stopped once the Bellman residual is below ``tol``."""
    if not tol > 0:
        raise UsageError("tol must be positive")
    P = mdp.P
    if np.any(np.abs(P.sum(axis=2) - 1.0) > 1e-12):
        raise UsageError("transition rows must sum to one")
    q = np.zeros_like(mdp.R)
    for _ in range(max_iter):
        q_next = mdp.R + mdp.gamma * P @ q.max(axis=1)
        if np.max(np.abs(q_next - q)) <= tol:
            # residual of q_next is at most gamma * tol
            return q_next
        q = q_next
    raise RuntimeError("value iteration did not converge")


def bellman_residual(mdp: FiniteMdp, q) -> float:
    return float(np.max(np.abs(mdp.R + mdp.gamma * mdp.P @ np.asarray(q).max(axis=1) - q)))


def rollout(model: GenerativeModel, policy, s0, horizon: int, stream, record=None):
    """Simulate many independent copies of a fixed policy in lockstep.

    Args:
        policy: ``policy(states, rng) -> actions`` acting on an ``(n, d)`` batch.
        s0: ``(n, d)`` array of initial states.
        record: optional iterable of time indices to keep; ``None`` keeps
            every step, which costs ``(horizon + 1) * n * d`` floats.

    Returns:
        ``(n_times, n, d)`` array of recorded states, in ``record`` order.
    """
    rng = as_generator(stream)
    states = np.array(s0, dtype=np.float64, ndmin=2)
    times = range(horizon + 1) if record is None else sorted(set(int(t) for t in record))
    keep = {t: i for i, t in enumerate(times)}
    out = np.empty((len(times),) + states.shape)
    if 0 in keep:
        out[keep[0]] = states
    for t in range(1, horizon + 1):
        actions = np.asarray(policy(states, rng), dtype=np.int64)
        states, _ = model.step_batch(states, actions, rng)
        if t in keep:
            out[keep[t]] = states
    return out


def single_action(states, rng):
    return np.zeros(len(states), dtype=np.int64)


def uniform_actions(n_actions: int):
    def policy(states, rng):
        return np.minimum((rng.random(len(states)) * n_actions).astype(np.int64), n_actions - 1)
    return policy


def serve_longest_actions(states, rng):
    return np.argmax(states, axis=1)
