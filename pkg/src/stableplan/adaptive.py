"""Online accuracy tuning by repeated halving.

The tuner starts at ``delta = 1`` and halves it each time the state norm
reaches ``(ln t)^2``.  If the planner is stabilizing for some fixed
``delta``, halvings eventually stop; otherwise the norm still grows no
faster than ``(ln t)^2``, which :func:`near_stability_metric` measures.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import UsageError

DEFAULT_T0 = 10
DEFAULT_FLOOR = 2.0 ** -20


@dataclass(frozen=True)
class TunerEvent:
    t: int
    norm: float
    threshold: float
    delta_after: float


@dataclass(frozen=True)
class TunerState:
    """Immutable tuner snapshot; ``delta`` is always ``2 ** -halving_count``.

    ``test_log`` keeps only the tests that fired; the rest are implied by
    the trajectory's norm column.  ``status`` becomes ``"delta_floor"`` when
    a halving would take ``delta`` below ``floor``; the state is then frozen.
    """

    halving_count: int = 0
    t0: int = DEFAULT_T0
    floor: float = DEFAULT_FLOOR
    test_log: tuple[TunerEvent, ...] = ()
    status: str = "ok"

    def __post_init__(self):
        if self.t0 < 1:
            raise UsageError("t0 must be at least 1")
        if not 0.0 < self.floor <= 1.0:
            raise UsageError("floor must lie in (0, 1]")

    @property
    def delta(self) -> float:
        return math.ldexp(1.0, -self.halving_count)

    @property
    def halted(self) -> bool:
        return self.status != "ok"


def threshold(t: int) -> float:
    return math.log(t) ** 2


def tuner_step(state: TunerState, t: int, s) -> TunerState:
    """Run the norm test at time ``t`` on state ``s`` and halve delta if it fires."""
    if t < 1:
        raise UsageError("t must be at least 1")
    if state.halted or t < state.t0:
        return state
    norm = float(np.linalg.norm(np.asarray(s, dtype=np.float64)))
    thr = threshold(t)
    if norm < thr:
        return state
    nxt = math.ldexp(1.0, -(state.halving_count + 1))
    if nxt < state.floor:
        return replace(state, status="delta_floor")
    event = TunerEvent(t=t, norm=norm, threshold=thr, delta_after=nxt)
    return replace(state, halving_count=state.halving_count + 1,
                   test_log=state.test_log + (event,))


def near_stability_metric(traj, t0: int = DEFAULT_T0) -> float:
    """``max_{t >= max(t0, 2)} ||s_t|| / (ln t)^2``; ``t = 1`` is skipped since ``ln 1 = 0``.

    Accepts a trajectory record or an array of states / norms indexed by t.
    """
    if hasattr(traj, "norms"):
        norms = traj.norms
    else:
        arr = np.asarray(traj, dtype=np.float64)
        norms = np.linalg.norm(arr, axis=1) if arr.ndim == 2 else np.abs(arr)
    start = max(t0, 2)
    if len(norms) <= start:
        raise UsageError(f"trajectory needs more than {start} rows")
    t = np.arange(start, len(norms))
    return float(np.max(norms[start:] / np.log(t) ** 2))


def last_halving_time(state: TunerState) -> int | None:
    return state.test_log[-1].t if state.test_log else None


def run_adaptive(model, policy_factory, spec, horizon: int, stream, s0=None,
                 t0: int = DEFAULT_T0, floor: float = DEFAULT_FLOOR, **kw):
    """Closed loop with the tuner in charge of delta.

    Args:
        policy_factory: maps a ``delta`` to the policy used while it is current.
        spec: Lyapunov spec used for the ``L`` column.
        stream: a :class:`~stableplan.streams.StreamKey` for the trial.

    Returns:
        ``(TrajectoryRecord, TunerState)``.
    """
    from .simulation import closed_loop

    tuner = TunerState(t0=t0, floor=floor)
    return closed_loop(model, policy_factory, s0=s0, horizon=horizon, key=stream,
                       spec=spec, tuner=tuner, **kw)
