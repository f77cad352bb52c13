"""Generative-model abstraction shared by planners, environments and trials.

States are fixed-length float vectors even when a model only ever visits
integer points; grid snapping needs reals and queues are happy with them.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .errors import ContractError, UsageError
from .streams import as_generator


class GenerativeModel:
    """Black-box sampler ``(state, action, stream) -> (next state, reward)``.

    Subclasses either set ``kernel_kind``/``kernel_params`` so the compiled
    planners can drive them, or override :meth:`transition` with plain
    numpy code (planners then fall back to their pure-Python paths).

    ``transition`` must be a pure function of its uniform draws: that is
    what makes every sampled step replayable.
    """

    name = "model"
    dimension: int = 1
    action_count: int = 1
    r_max: float = 1.0
    gamma: float = 0.9
    n_uniforms: int = 1
    kernel_kind: int | None = None
    kernel_params: np.ndarray | None = None
    # bound on ||s' - s||_2 for one step, when known
    state_increment_bound: float | None = None

    @property
    def v_max(self) -> float:
        return self.r_max / (1.0 - self.gamma)

    def transition(self, states, actions, uniforms):
        """Vectorised step with explicit uniform draws, one row per sample."""
        if self.kernel_kind is None:
            raise NotImplementedError(f"{type(self).__name__} must implement transition()")
        return kernels.transition_batch(
            self.kernel_kind, self.kernel_params,
            np.ascontiguousarray(states, dtype=np.float64),
            np.ascontiguousarray(actions, dtype=np.int64),
            np.ascontiguousarray(uniforms, dtype=np.float64),
        )

    def step_batch(self, states, actions, rng: np.random.Generator):
        u = rng.random((len(states), self.n_uniforms))
        return self.transition(states, actions, u)

    def check_state(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=np.float64)
        if s.ndim != 1 or s.shape[0] != self.dimension:
            raise UsageError(f"{self.name}: state must have dimension {self.dimension}, got shape {s.shape}")
        if not np.all(np.isfinite(s)):
            raise UsageError(f"{self.name}: state entries must be finite")
        return s

    def check_action(self, a) -> int:
        a = int(a)
        if not 0 <= a < self.action_count:
            raise UsageError(f"{self.name}: action {a} outside [0, {self.action_count})")
        return a

    def check_rewards(self, rewards):
        rewards = np.asarray(rewards)
        if rewards.size and (rewards.min() < 0.0 or rewards.max() > self.r_max or np.isnan(rewards).any()):
            raise ContractError(f"{self.name}: reward outside [0, {self.r_max}]")


def step(model: GenerativeModel, s, a, stream):
    """Sample one transition from ``model`` at state ``s`` under action ``a``."""
    s = model.check_state(s)
    a = model.check_action(a)
    rng = as_generator(stream)
    nxt, r = model.step_batch(s[None, :], np.array([a]), rng)
    model.check_rewards(r)
    return nxt[0], float(r[0])
