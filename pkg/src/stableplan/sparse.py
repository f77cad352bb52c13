"""Vanilla sparse-sampling look-ahead oracle.

The tree is built one depth level at a time so every level is a single
vectorised call into the model.  Uniforms for a level are drawn as one
``(nodes * actions * width, n_uniforms)`` block in node-major order, which
is the same sequence a node-by-node recursion would consume.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BudgetError, UsageError
from .mdp import GenerativeModel
from .streams import as_generator

DEFAULT_BUDGET_CAP = 10_000_000


def horizon_for(delta: float, gamma: float) -> int:
    """Smallest H >= 1 with ``gamma ** H <= delta``."""
    if not 0.0 < gamma < 1.0:
        raise UsageError(f"gamma must lie in (0, 1), got {gamma}")
    if not 0.0 < delta < 1.0:
        raise UsageError(f"delta must lie in (0, 1), got {delta}")
    h = max(1, math.ceil(math.log(delta) / math.log(gamma)))
    # guard against the ratio landing a hair below an integer
    while gamma ** h > delta:
        h += 1
    while h > 1 and gamma ** (h - 1) <= delta:
        h -= 1
    return h


@dataclass(frozen=True)
class SparseParams:
    """Depth and width of the look-ahead tree.

    ``delta`` is ``None`` when ``horizon``/``width`` were set by hand.
    """

    gamma: float
    horizon: int
    width: int
    delta: float | None = None

    def __post_init__(self):
        if self.horizon < 1 or self.width < 1:
            raise UsageError("horizon and width must be at least 1")
        if not 0.0 < self.gamma < 1.0:
            raise UsageError("gamma must lie in (0, 1)")

    def projected_samples(self, action_count: int) -> int:
        """Simulator calls for a full tree: ``A C sum_{h<H} (A C)^h``."""
        ac = action_count * self.width
        return ac * sum(ac ** h for h in range(self.horizon))


def sparse_params(delta: float, gamma: float, action_count: int) -> SparseParams:
    """Depth and width that give accuracy ``delta`` with probability ``1 - delta``."""
    if action_count < 1:
        raise UsageError("action_count must be positive")
    H = horizon_for(delta, gamma)
    scale = 2.0 * gamma ** 2 / (delta ** 2 * (1.0 - gamma) ** 2)
    inner = 2.0 * H * math.log(scale * action_count * H) + math.log(2.0 / delta)
    C = max(1, math.ceil(scale * inner))
    return SparseParams(gamma=gamma, horizon=H, width=C, delta=delta)


@dataclass(frozen=True)
class QEstimate:
    values: np.ndarray
    samples_used: int
    expansions: int = 0

    @property
    def best_action(self) -> int:
        return int(np.argmax(self.values))


def estimate_q(model: GenerativeModel, s, p: SparseParams, stream,
               budget_cap: int | None = DEFAULT_BUDGET_CAP) -> QEstimate:
    """Estimate Q at ``s`` for every action with a full sparse-sampling tree.

    Raises:
        BudgetError: before drawing anything, if the full tree would need
            more than ``budget_cap`` simulator calls.
        ContractError: if the model emits a reward outside ``[0, r_max]``.
    """
    s = model.check_state(s)
    A, C, H = model.action_count, p.width, p.horizon
    projected = p.projected_samples(A)
    if budget_cap is not None and projected > budget_cap:
        raise BudgetError(
            f"sparse tree needs {projected} simulator calls, cap is {budget_cap}",
            projected=projected, cap=budget_cap)
    rng = as_generator(stream)

    actions_one = np.repeat(np.arange(A, dtype=np.int64), C)
    nodes = s[None, :]
    rewards = []
    used = 0
    expansions = 0
    for h in range(H):
        n = len(nodes)
        states = np.repeat(nodes, A * C, axis=0)
        acts = np.tile(actions_one, n)
        u = rng.random((n * A * C, model.n_uniforms))
        nxt, r = model.transition(states, acts, u)
        model.check_rewards(r)
        used += n * A * C
        expansions += n
        rewards.append(r.reshape(n, A, C))
        nodes = nxt

    # back up from the leaves; V at depth H is zero
    v_next = None
    for h in range(H - 1, -1, -1):
        r = rewards[h]
        if v_next is None:
            q = r.mean(axis=2)
        else:
            q = (r + p.gamma * v_next.reshape(r.shape)).mean(axis=2)
        v_next = q.max(axis=1)
    return QEstimate(values=q[0].copy(), samples_used=used, expansions=expansions)
