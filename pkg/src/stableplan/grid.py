"""Epsilon-grid sparse-sampling oracle with memoized next-state samples.

Sampled next states are snapped to the lattice ``eps * Z^d``.  Each grid
state is expanded at most once per cache: its ``width`` samples per action
are drawn the first time it is reached and reused at every later depth.
The queried root is expanded as given, without snapping.

Two implementations consume identical random draws in identical order:
a compiled one for the built-in models and :func:`estimate_q_grid_reference`
in plain Python, which also serves models that only define ``transition``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import BudgetError, ContractError, UsageError
from .mdp import GenerativeModel
from .sparse import DEFAULT_BUDGET_CAP, QEstimate, horizon_for
from .streams import as_generator


def snap(s, epsilon: float) -> np.ndarray:
    """Nearest lattice point, ties to the even multiple of ``epsilon``."""
    if not epsilon > 0:
        raise UsageError("epsilon must be positive")
    return np.rint(np.asarray(s, dtype=np.float64) / epsilon) * epsilon


@dataclass(frozen=True)
class GridParams:
    gamma: float
    horizon: int
    width: int
    epsilon: float
    delta: float | None = None
    zeta: float | None = None
    dimension: int | None = None
    nu_prime: float | None = None

    def __post_init__(self):
        if self.horizon < 1 or self.width < 1:
            raise UsageError("horizon and width must be at least 1")
        if not self.epsilon > 0:
            raise UsageError("epsilon must be positive")
        if not 0.0 < self.gamma < 1.0:
            raise UsageError("gamma must lie in (0, 1)")

    def grid_bound(self, nu_prime: float | None = None, dimension: int | None = None) -> int:
        """Ceiling on distinct grid states reachable within the horizon (inf on overflow)."""
        nu = self.nu_prime if nu_prime is None else nu_prime
        d = self.dimension if dimension is None else dimension
        if nu is None or d is None:
            raise UsageError("grid bound needs the state-increment bound and dimension")
        try:
            return math.ceil((2.0 * self.horizon * nu / self.epsilon + 1.0) ** d)
        except OverflowError:
            return math.inf


def grid_epsilon(delta, gamma, zeta, d, v_max) -> float:
    return delta * v_max * (1.0 - gamma) / (2.0 * zeta * gamma * math.sqrt(d))


def grid_params(delta: float, gamma: float, zeta: float, d: int, v_max: float,
                action_count: int, nu_prime: float) -> GridParams:
    """Grid spacing, depth and width implied by the accuracy target ``delta``."""
    for name, v in (("zeta", zeta), ("d", d), ("v_max", v_max),
                    ("action_count", action_count), ("nu_prime", nu_prime)):
        if not v > 0:
            raise UsageError(f"{name} must be positive")
    H = horizon_for(delta, gamma)
    eps = grid_epsilon(delta, gamma, zeta, d, v_max)
    scale = 2.0 * gamma ** 2 / ((1.0 - gamma) ** 2 * delta ** 2)
    inner = math.log(2.0 * action_count / delta) + d * math.log(H) + d * math.log(1.0 / eps)
    C = max(1, math.ceil(scale * inner))
    return GridParams(gamma=gamma, horizon=H, width=C, epsilon=eps, delta=delta,
                      zeta=zeta, dimension=int(d), nu_prime=nu_prime)


@dataclass
class GridCache:
    """Memo table for one model and one grid spacing.

    Row 0 is scratch space for an off-grid root and is never looked up.
    Arrays grow by doubling and are replaced wholesale after each query.
    """

    dimension: int
    action_count: int
    width: int
    epsilon: float
    coords: np.ndarray = field(init=False)
    keys: np.ndarray = field(init=False)
    child: np.ndarray = field(init=False)
    rew: np.ndarray = field(init=False)
    expanded: np.ndarray = field(init=False)
    stamp: np.ndarray = field(init=False)
    table: np.ndarray = field(init=False)
    n_slots: int = field(init=False, default=1)
    stamp_ctr: int = field(init=False, default=0)

    def __post_init__(self, rows: int = 256):
        d, A, C = self.dimension, self.action_count, self.width
        self.coords = np.zeros((rows, d))
        self.keys = np.zeros((rows, d), dtype=np.int64)
        self.child = np.zeros((rows, A, C), dtype=np.int64)
        self.rew = np.zeros((rows, A, C))
        self.expanded = np.zeros(rows, dtype=np.bool_)
        self.stamp = np.zeros(rows, dtype=np.int64)
        self.table = np.full(1024, -1, dtype=np.int64)

    def reset(self) -> None:
        """Forget every entry but keep the allocated storage."""
        self.table.fill(-1)
        self.n_slots = 1

    @property
    def distinct_states(self) -> int:
        """Grid states recorded so far (the off-grid root is not counted)."""
        return self.n_slots - 1

    def compatible(self, model: GenerativeModel, p: GridParams) -> bool:
        return (self.dimension == model.dimension and self.action_count == model.action_count
                and self.width == p.width and self.epsilon == p.epsilon)


def estimate_q_grid(model: GenerativeModel, s, p: GridParams, cache: GridCache | None = None,
                    stream=None, budget_cap: int | None = DEFAULT_BUDGET_CAP,
                    check: bool = True) -> QEstimate:
    """Estimate Q at ``s`` with the memoized grid tree.

    ``samples_used`` counts fresh simulator calls only.  Pass the same
    ``cache`` to later calls to share samples across queries; by default
    each call gets an empty one.  ``check=False`` skips state validation
    for callers that already hold a model-produced state.

    Raises:
        BudgetError: when the next expansion would push fresh calls for
            this query past ``budget_cap``.
        ContractError: on a reward outside ``[0, r_max]``.
    """
    if model.kernel_kind is None:
        return estimate_q_grid_reference(model, s, p, stream=stream, budget_cap=budget_cap)
    if check:
        s = model.check_state(s)
    if cache is None:
        cache = GridCache(model.dimension, model.action_count, p.width, p.epsilon)
    elif not cache.compatible(model, p):
        raise UsageError("cache was built for a different model shape or grid")
    rng = as_generator(stream)
    cap = np.iinfo(np.int64).max if budget_cap is None else int(budget_cap)
    out = kernels.grid_query(
        model.kernel_kind, model.kernel_params, model.n_uniforms, model.action_count,
        p.width, p.horizon, p.gamma, p.epsilon, model.r_max, s, rng, cap,
        cache.coords, cache.keys, cache.child, cache.rew, cache.expanded, cache.stamp,
        cache.table, cache.n_slots, cache.stamp_ctr)
    status, q, fresh, expansions = out[:4]
    (cache.coords, cache.keys, cache.child, cache.rew, cache.expanded, cache.stamp,
     cache.table, cache.n_slots, cache.stamp_ctr) = out[4:]
    if status == kernels.BUDGET:
        raise BudgetError(f"grid oracle exceeded {cap} fresh simulator calls in one query",
                          projected=int(fresh) + model.action_count * p.width, cap=cap)
    if status == kernels.CONTRACT:
        raise ContractError(f"{model.name}: reward outside [0, {model.r_max}]")
    return QEstimate(values=q, samples_used=int(fresh), expansions=int(expansions))


def estimate_q_grid_reference(model: GenerativeModel, s, p: GridParams, memo: dict | None = None,
                              stream=None, budget_cap: int | None = DEFAULT_BUDGET_CAP,
                              ) -> QEstimate:
    """Pure-Python grid oracle; slow, but easy to read and to audit.

    ``memo`` maps integer lattice keys to ``(children, rewards)`` lists and
    may be shared between calls like :class:`GridCache`.
    """
    s = model.check_state(s)
    rng = as_generator(stream)
    A, C, H, eps = model.action_count, p.width, p.horizon, p.epsilon
    memo = {} if memo is None else memo
    cap = math.inf if budget_cap is None else budget_cap

    k_root = tuple(int(k) for k in np.rint(s / eps))
    root = k_root if all(k * eps == x for k, x in zip(k_root, s)) else None
    # None stands for the un-snapped root, which is never memoized
    local = {}

    def entry(x):
        return local.get(x) if x is None else memo.get(x)

    fresh = 0
    expansions = 0
    levels = [[root]]
    for h in range(H):
        nxt, seen = [], set()
        for x in levels[h]:
            if entry(x) is None:
                if fresh + A * C > cap:
                    raise BudgetError(f"grid oracle exceeded {cap} fresh simulator calls in one query",
                                      projected=fresh + A * C, cap=cap)
                here = s if x is None else np.array([k * eps for k in x])
                children = [[None] * C for _ in range(A)]
                rewards = [[0.0] * C for _ in range(A)]
                for a in range(A):
                    for c in range(C):
                        u = rng.random((1, model.n_uniforms))
                        y, r = model.transition(here[None, :], np.array([a]), u)
                        fresh += 1
                        r = float(r[0])
                        if not 0.0 <= r <= model.r_max:
                            raise ContractError(f"{model.name}: reward outside [0, {model.r_max}]")
                        children[a][c] = tuple(int(k) for k in np.rint(y[0] / eps))
                        rewards[a][c] = r
                if x is None:
                    local[None] = (children, rewards)
                else:
                    memo[x] = (children, rewards)
                expansions += 1
            if h + 1 < H:
                for row in entry(x)[0]:
                    for y in row:
                        if y not in seen:
                            seen.add(y)
                            nxt.append(y)
        levels.append(nxt)

    values = {}
    for h in range(H - 1, -1, -1):
        new = {}
        for x in levels[h]:
            children, rewards = entry(x)
            qs = []
            for a in range(A):
                acc = 0.0
                for c in range(C):
                    if h == H - 1:
                        acc += rewards[a][c]
                    else:
                        acc += rewards[a][c] + p.gamma * values[children[a][c]]
                qs.append(acc / C)
            new[x] = max(qs)
            if h == 0:
                q_root = np.array(qs)
        values = new
    return QEstimate(values=q_root, samples_used=fresh, expansions=expansions)
