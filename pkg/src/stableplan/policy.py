"""Boltzmann action selection and the temperature rule that makes it stabilizing."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import UsageError
from .streams import as_generator


@dataclass(frozen=True)
class BoltzmannParams:
    """Temperature and oracle accuracy; :meth:`coupled` ties ``delta = tau ** 2``."""

    tau: float
    delta: float

    def __post_init__(self):
        if not self.tau > 0:
            raise UsageError("tau must be positive")
        if not self.delta > 0:
            raise UsageError("delta must be positive")

    @classmethod
    def coupled(cls, tau: float) -> "BoltzmannParams":
        return cls(tau=tau, delta=tau * tau)

    @classmethod
    def from_delta(cls, delta: float) -> "BoltzmannParams":
        return cls(tau=math.sqrt(delta), delta=delta)


def boltzmann(q, tau: float) -> np.ndarray:
    """Softmax of ``q / tau``, shifted by the max so tiny ``tau`` cannot overflow."""
    if not tau > 0:
        raise UsageError(f"tau must be positive, got {tau}")
    q = np.asarray(q, dtype=np.float64)
    if not np.all(np.isfinite(q)):
        raise UsageError("q must be finite")
    w = np.exp((q - q.max()) / tau)
    return w / w.sum()


def action_from_uniform(probs, u: float) -> int:
    """Inverse-CDF lookup in fixed action order."""
    cdf = np.cumsum(probs)
    a = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    return min(a, len(cdf) - 1)


def sample_action(probs, stream) -> int:
    return action_from_uniform(probs, as_generator(stream).random())


def tau_terms(alpha, nu, gamma, r_max, action_count, delta_min) -> list[float]:
    """The candidate upper limits on the temperature; the rule takes their min.

    The last candidate is omitted when its logarithm would be nonpositive.
    """
    for name, v in (("alpha", alpha), ("nu", nu), ("r_max", r_max),
                    ("action_count", action_count), ("delta_min", delta_min)):
        if not v > 0:
            raise UsageError(f"{name} must be positive")
    if not 0.0 < gamma < 1.0:
        raise UsageError("gamma must lie in (0, 1)")
    A = action_count
    terms = [
        math.sqrt(alpha / (24.0 * nu)),
        (1.0 - gamma) / (8.0 * r_max),
        (1.0 - gamma) * alpha / (48.0 * r_max * A * A * nu),
    ]
    arg = 24.0 * nu * A / alpha
    if arg > 1.0:
        terms.append(delta_min / math.log(arg))
    return terms


def tau_of_alpha(alpha, nu, gamma, r_max, action_count, delta_min) -> float:
    """Largest temperature for which the Boltzmann planner keeps drift at ``-alpha/2``."""
    return min(tau_terms(alpha, nu, gamma, r_max, action_count, delta_min))


def tv_distance(p, q) -> float:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise UsageError("distributions must have equal length")
    return 0.5 * float(np.abs(p - q).sum())


def perturbation_bound(eps: float, tau: float, action_count: int) -> float:
    """TV bound between softmaxes whose inputs differ by at most ``eps`` in sup norm."""
    # (e^x - 1)/(e^x + 1) == tanh(x/2)
    return 0.5 * action_count ** 2 * math.tanh(eps / tau)


def kappa_bound(eps: float, tau: float, action_count: int, delta_min: float) -> float:
    """TV bound between the estimated-Q softmax and the greedy optimal policy."""
    if eps < 0 or not tau > 0 or action_count < 1 or delta_min < 0:
        raise UsageError("kappa_bound needs eps >= 0, tau > 0, action_count >= 1, delta_min >= 0")
    return (perturbation_bound(eps, tau, action_count)
            + (action_count - 1) * math.exp(-delta_min / tau))


def eps_of_delta(delta: float, r_max: float, gamma: float) -> float:
    """Q-estimate error radius implied by oracle accuracy ``delta``."""
    return 2.0 * r_max * delta / (1.0 - gamma)


def greedy_policy(q, tol: float = 0.0) -> np.ndarray:
    """Uniform distribution over the actions within ``tol`` of the max."""
    q = np.asarray(q, dtype=np.float64)
    best = q >= q.max() - tol
    return best / best.sum()


def action_gap(q, tol: float = 0.0) -> float:
    """Gap between the optimal value and the best suboptimal one (inf if none)."""
    q = np.asarray(q, dtype=np.float64)
    rest = q[q < q.max() - tol]
    return float(q.max() - rest.max()) if rest.size else math.inf
