"""Lyapunov drift diagnostics, Hajek-type bounds and stability verdicts.

Bounds come from a drift condition: ``L`` moves by at most ``nu`` per step
and drifts down by at least ``alpha`` in expectation whenever ``L > B``.
Empirical counterparts are estimated from trajectory logs alone, so every
diagnostic here can be recomputed from persisted files.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ContractError, UsageError
from .trajectory import TrajectoryRecord

LYAPUNOV_FUNCTIONS = {
    "euclidean": lambda s: np.linalg.norm(s, axis=-1),
    "l1": lambda s: np.abs(s).sum(axis=-1),
    "max": lambda s: np.abs(s).max(axis=-1),
}

RHO_VARIANTS = ("proof", "statement")


@dataclass(frozen=True)
class LyapunovSpec:
    """A Lyapunov function together with its declared drift constants."""

    nu: float = 1.0
    nu_prime: float = 1.0
    B: float = 0.0
    alpha: float = 0.2
    c1: float = 1.0
    c2: float = 0.0
    function: str = "euclidean"

    def __post_init__(self):
        if not (self.nu > 0 and self.nu_prime > 0 and self.alpha > 0 and self.c1 > 0):
            raise UsageError("nu, nu_prime, alpha and c1 must be positive")
        if self.B < 0:
            raise UsageError("B must be nonnegative")
        if self.function not in LYAPUNOV_FUNCTIONS:
            raise UsageError(f"unknown Lyapunov function {self.function!r}")

    def __call__(self, states) -> np.ndarray:
        states = np.asarray(states, dtype=np.float64)
        values = LYAPUNOV_FUNCTIONS[self.function](states)
        self.check_norm_bound(states, values)
        return values

    def check_norm_bound(self, states, values, tol: float = 1e-9) -> None:
        """Raise if ``L(s) >= c1 ||s||_2 + c2`` fails on any given state."""
        floor = self.c1 * np.linalg.norm(np.atleast_2d(states), axis=-1) + self.c2
        if np.any(np.atleast_1d(values) < floor - tol):
            raise ContractError("Lyapunov function falls below c1*||s|| + c2")


@dataclass(frozen=True)
class HajekConstants:
    c: float
    eta: float
    rho: float
    nu: float
    alpha_eff: float
    variant: str = "proof"

    @property
    def contraction_holds(self) -> bool:
        """Whether ``1 - eta*alpha + eta^2*c <= rho`` (the per-step mgf contraction)."""
        lhs = 1.0 - self.eta * self.alpha_eff + self.eta ** 2 * self.c
        return lhs <= self.rho + 1e-15


def hajek_constants(spec: LyapunovSpec | float, alpha_eff: float,
                    variant: str = "proof") -> HajekConstants:
    """Exponential-moment constants for a process with drift ``-alpha_eff``.

    Args:
        spec: a :class:`LyapunovSpec` or just the increment bound ``nu``.
        alpha_eff: drift magnitude to use; pass ``spec.alpha / 2`` when the
            drift is only guaranteed at half strength.
        variant: ``"proof"`` uses ``rho = 1 - eta*alpha/2``; ``"statement"``
            uses ``rho = 1 - eta*alpha/(2c)``.  Only the former guarantees
            the contraction inequality in general.
    """
    nu = spec.nu if isinstance(spec, LyapunovSpec) else float(spec)
    if not nu > 0 or not alpha_eff > 0:
        raise UsageError("nu and alpha_eff must be positive")
    if variant not in RHO_VARIANTS:
        raise UsageError(f"variant must be one of {RHO_VARIANTS}")
    c = math.exp(nu) - nu - 1.0
    eta = min(1.0, alpha_eff / (2.0 * c))
    rho = 1.0 - eta * alpha_eff / 2.0 if variant == "proof" else 1.0 - eta * alpha_eff / (2.0 * c)
    if not 0.0 < rho < 1.0:
        raise UsageError(f"alpha_eff={alpha_eff} gives rho={rho} outside (0, 1)")
    return HajekConstants(c=c, eta=eta, rho=rho, nu=nu, alpha_eff=alpha_eff, variant=variant)


def tail_bound_raw(consts: HajekConstants, spec: LyapunovSpec, L0: float, b, t) -> np.ndarray:
    """Unclipped bound on ``P(L(s_t) >= b)``; ``t`` may be ``math.inf``."""
    b = np.asarray(b, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0):
        raise UsageError("t must be nonnegative")
    rho_t = np.where(np.isinf(t), 0.0, consts.rho ** np.where(np.isinf(t), 0.0, t))
    transient = rho_t * np.exp(consts.eta * (L0 - b))
    stationary = (1.0 - rho_t) / (1.0 - consts.rho) * np.exp(consts.nu + consts.eta * (spec.B - b))
    out = transient + stationary
    return out if out.ndim else float(out)


def tail_bound(consts, spec, L0, b, t):
    """Bound on ``P(L(s_t) >= b)`` clipped to ``[0, 1]``."""
    raw = tail_bound_raw(consts, spec, L0, b, t)
    out = np.clip(raw, 0.0, 1.0)
    return out if np.ndim(out) else float(out)


def return_time_bound(consts, spec, L0: float, a: float, k) -> float:
    """Bound on ``P(T_a > k)`` where ``T_a`` is the first time ``L <= a``."""
    if a < spec.B:
        raise UsageError(f"level a={a} must be at least B={spec.B}")
    out = math.exp(consts.eta * (L0 - a)) * np.power(consts.rho, k)
    return out if np.ndim(out) else float(out)


def mean_return_bound(consts, spec, L0: float, a: float) -> float:
    """Bound on ``E[T_a]`` obtained by summing :func:`return_time_bound` over ``k``."""
    if a < spec.B:
        raise UsageError(f"level a={a} must be at least B={spec.B}")
    return math.exp(consts.eta * (L0 - a)) / (1.0 - consts.rho)


# ---------------------------------------------------------------- estimators

@dataclass(frozen=True)
class DriftEstimate:
    estimate: float
    half_width: float
    n: int
    max_increment: float
    increment_violation: bool


def _lyap(x) -> np.ndarray:
    return np.asarray(x.lyapunov if isinstance(x, TrajectoryRecord) else x, dtype=np.float64)


def empirical_drift(traj, spec: LyapunovSpec, threshold: float | None = None) -> DriftEstimate:
    """Mean one-step change of ``L`` over steps that start above ``threshold``.

    ``threshold`` defaults to ``spec.B``.  Accepts a record, a 1-D array of
    ``L`` values, or a list of either (increments are pooled).
    """
    seqs = traj if isinstance(traj, (list, tuple)) else [traj]
    thr = spec.B if threshold is None else threshold
    incs, maxinc = [], 0.0
    for x in seqs:
        L = _lyap(x)
        if len(L) < 2:
            continue
        dL = np.diff(L)
        maxinc = max(maxinc, float(np.abs(dL).max()))
        incs.append(dL[L[:-1] > thr])
    dl = np.concatenate(incs) if incs else np.empty(0)
    n = len(dl)
    if n == 0:
        est, hw = math.nan, math.nan
    else:
        est = float(dl.mean())
        hw = 1.96 * float(dl.std(ddof=1)) / math.sqrt(n) if n > 1 else math.inf
    return DriftEstimate(est, hw, n, maxinc, maxinc > spec.nu + 1e-9)


def empirical_tail(trajs, b, t, use_norm: bool = False, strict: bool = False):
    """Fraction of trajectories with ``L(s_t) >= b`` (or ``> b`` if ``strict``).

    ``use_norm`` switches from ``L`` to the Euclidean norm of the state.
    """
    vals = []
    for x in trajs:
        if isinstance(x, TrajectoryRecord):
            seq = x.norms if use_norm else x.lyapunov
        else:
            seq = np.asarray(x)
        if len(seq) <= t:
            raise UsageError(f"trajectory of length {len(seq)} has no step {t}")
        vals.append(seq[t])
    vals = np.asarray(vals)
    if not len(vals):
        return math.nan
    b = np.asarray(b, dtype=np.float64)
    hit = vals[:, None] > b.ravel() if strict else vals[:, None] >= b.ravel()
    out = hit.mean(axis=0)
    return out.reshape(b.shape) if b.ndim else float(out[0])


def hitting_time(L, a: float) -> int | None:
    """First ``t`` with ``L[t] <= a``; ``None`` if it never happens."""
    idx = np.flatnonzero(np.asarray(L) <= a)
    return int(idx[0]) if len(idx) else None


def excursions(L, level: float) -> tuple[np.ndarray, int]:
    """Lengths of completed excursions above ``level`` and the censored count.

    An excursion starts at the first step above ``level`` (or at ``t=0`` if
    the trajectory starts there) and lasts until ``L`` is back at or below it.
    """
    above = np.asarray(L) > level
    if not above.any():
        return np.empty(0, dtype=np.int64), 0
    prev = np.concatenate([[False], above[:-1]])
    starts = np.flatnonzero(above & ~prev)
    ends = np.flatnonzero(~above & prev)
    done = len(ends)
    return (ends - starts[:done]).astype(np.int64), len(starts) - done


# ---------------------------------------------------------------- verdicts

@dataclass
class StabilityReport:
    verdict: str
    theta: float
    n_trajectories: int
    horizon: int
    levels: list
    checkpoints: list
    tail: list                          # late-horizon averaged P(L > b) per level
    tail_by_time: list                  # rows per checkpoint
    time_average_tail: list             # within-trajectory time averages (autocorrelated)
    boundedness_level: float | None
    recurrence: dict
    drift: dict
    hajek: dict
    notes: list = field(default_factory=list)
    scale: str = "desk"

    def to_dict(self) -> dict:
        return _clean(asdict(self))


def _clean(x):
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return None if not math.isfinite(x) else x
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def stability_verdict(trajs, spec: LyapunovSpec, theta: float = 0.05, levels=None,
                      late_fraction: float = 0.25, n_checkpoints: int = 20,
                      alpha_scale: float = 0.5, rho_variant: str = "proof",
                      min_length: int = 10) -> StabilityReport:
    """Boundedness and recurrence witnesses from many trajectories.

    Boundedness: the smallest grid level ``b`` whose tail ``P(L > b)``,
    taken across trajectories and averaged over checkpoints in the final
    ``late_fraction`` of the horizon, is at most ``theta``.  Recurrence:
    excursions above ``b`` that come back; it holds when the share of
    excursions still open at the horizon is at most ``theta``.

    Verdict is ``"stable"`` with both witnesses, ``"not-stable"`` without a
    boundedness level, and ``"inconclusive"`` otherwise or when there is too
    little data.  All verdicts are at desk scale only.
    """
    if not 0.0 < theta < 1.0:
        raise UsageError("theta must lie in (0, 1)")
    levels = np.arange(0.0, 101.0) if levels is None else np.asarray(levels, dtype=np.float64)
    levels = np.sort(levels)
    seqs = [_lyap(x) for x in trajs]
    notes = []
    n = len(seqs)
    T = min((len(s) for s in seqs), default=0) - 1
    drift = empirical_drift(list(seqs), spec)
    try:
        consts = hajek_constants(spec, alpha_scale * spec.alpha, rho_variant)
    except UsageError as exc:
        consts = None
        notes.append(f"hajek constants unavailable: {exc}")
    hajek = {} if consts is None else {
        "c": consts.c, "eta": consts.eta, "rho": consts.rho, "alpha_eff": consts.alpha_eff,
        "variant": consts.variant, "contraction_holds": consts.contraction_holds,
        "nu": spec.nu, "B": spec.B,
    }
    base = dict(theta=theta, n_trajectories=n, horizon=max(T, 0), levels=levels.tolist(),
                drift=asdict(drift), hajek=hajek)
    if n == 0 or T < min_length:
        notes.append("insufficient data")
        return StabilityReport(verdict="inconclusive", checkpoints=[], tail=[], tail_by_time=[],
                               time_average_tail=[], boundedness_level=None,
                               recurrence={}, notes=notes, **base)
    if any(len(s) != T + 1 for s in seqs):
        notes.append(f"trajectories of unequal length; truncated to {T + 1} rows")
    M = np.stack([s[: T + 1] for s in seqs])            # (n, T+1)

    start = int(math.floor((1.0 - late_fraction) * T))
    checkpoints = np.unique(np.linspace(start, T, n_checkpoints).round().astype(int))
    late = M[:, checkpoints]                                 # (n, k)
    by_time = (late[:, :, None] > levels).mean(axis=0)      # (k, levels)
    tail = by_time.mean(axis=0)
    tavg = (M[:, start:, None] > levels).mean(axis=(0, 1)) if M.shape[0] * (T + 1 - start) * len(levels) <= 5e7 \
        else np.array([(M[:, start:] > b).mean() for b in levels])

    ok = np.flatnonzero(tail <= theta)
    b_star = float(levels[ok[0]]) if len(ok) else None
    recurrence = {}
    if b_star is None:
        verdict = "not-stable"
        notes.append(f"tail above every tested level exceeds theta; max late L = {float(late.max()):.6g}")
    else:
        lengths, censored = [], 0
        for s in M:
            done, open_ = excursions(s, b_star)
            lengths.append(done)
            censored += open_
        lengths = np.concatenate(lengths)
        total = len(lengths) + censored
        censored_frac = censored / total if total else 0.0
        mean_rt = float(lengths.mean()) if len(lengths) else 0.0
        se = float(lengths.std(ddof=1) / math.sqrt(len(lengths))) if len(lengths) > 1 else 0.0
        recurrence = {
            "level": b_star, "completed": int(len(lengths)), "censored": int(censored),
            "censored_fraction": censored_frac, "mean_return_time": mean_rt,
            "mean_return_time_se": se,
            "max_return_time": int(lengths.max()) if len(lengths) else 0,
        }
        if consts is not None and b_star >= spec.B:
            # excursions start at most nu above the level
            recurrence["mean_return_bound"] = mean_return_bound(consts, spec, b_star + spec.nu, b_star)
        witness = censored_frac <= theta
        recurrence["witness"] = witness
        verdict = "stable" if witness else "inconclusive"
        if not witness:
            notes.append("too many excursions still open at the horizon")
    return StabilityReport(verdict=verdict, checkpoints=checkpoints.tolist(), tail=tail.tolist(),
                           tail_by_time=by_time.tolist(), time_average_tail=tavg.tolist(),
                           boundedness_level=b_star, recurrence=recurrence, notes=notes, **base)
