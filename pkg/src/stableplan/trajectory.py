"""Per-step trajectory logs and their CSV persistence.

File layout: ``#``-prefixed ``key=value`` header lines (schema version
first), one column-name line, then one row per time step ``t = 0..T``.
The last row holds the final state, so its action is ``-1`` and its reward
and sample count are empty.  Floats are written with ``repr`` so a
read/write round trip is exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import TrajectoryParseError

SCHEMA_VERSION = 1
HEADER_KEYS = ("schema", "env", "seed", "trial", "config_hash", "horizon", "status", "dimension")


@dataclass
class TrajectoryRecord:
    states: np.ndarray                 # (n, d)
    actions: np.ndarray                # (n,), -1 on the final row
    rewards: np.ndarray                # (n,), nan on the final row
    lyapunov: np.ndarray               # (n,)
    deltas: np.ndarray                 # (n,)
    samples: np.ndarray                # (n,), planner calls spent choosing a_t
    env: str = "model"
    seed: int = 0
    trial: int = 0
    config_hash: str = ""
    horizon: int | None = None
    status: str = "ok"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64).reshape(len(self.states), -1)
        if self.horizon is None:
            self.horizon = len(self.states) - 1

    @property
    def dimension(self) -> int:
        return self.states.shape[1]

    @property
    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.states, axis=1)

    def __len__(self):
        return len(self.states)

    @classmethod
    def from_states(cls, states, lyapunov=None, **kw) -> "TrajectoryRecord":
        """Wrap a bare state sequence, e.g. from a fixed-policy rollout."""
        states = np.asarray(states, dtype=np.float64)
        if states.ndim == 1:
            states = states[:, None]
        n = len(states)
        lyap = np.linalg.norm(states, axis=1) if lyapunov is None else np.asarray(lyapunov, float)
        actions = np.full(n, -1, dtype=np.int64)
        rewards = np.full(n, np.nan)
        return cls(states, actions, rewards, lyap, kw.pop("deltas", np.ones(n)),
                   kw.pop("samples", np.zeros(n, dtype=np.int64)), **kw)

    def columns(self) -> list[str]:
        return (["t"] + [f"s{i}" for i in range(self.dimension)]
                + ["action", "reward", "lyapunov", "norm", "delta", "samples"])


def _fmt(x: float) -> str:
    return "" if math.isnan(x) else repr(float(x))


def write_csv(rec: TrajectoryRecord, path) -> None:
    header = {
        "schema": SCHEMA_VERSION, "env": rec.env, "seed": rec.seed, "trial": rec.trial,
        "config_hash": rec.config_hash, "horizon": rec.horizon, "status": rec.status,
        "dimension": rec.dimension,
    }
    lines = [f"# {k}={header[k]}" for k in HEADER_KEYS]
    lines += [f"# {k}={v}" for k, v in sorted(rec.meta.items())]
    lines.append(",".join(rec.columns()))
    norms = rec.norms
    for t in range(len(rec)):
        row = [str(t)]
        row += [repr(float(x)) for x in rec.states[t]]
        row += [str(int(rec.actions[t])), _fmt(rec.rewards[t]), repr(float(rec.lyapunov[t])),
                repr(float(norms[t])), repr(float(rec.deltas[t])),
                "" if rec.actions[t] < 0 else str(int(rec.samples[t]))]
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_csv(path) -> TrajectoryRecord:
    """Parse a trajectory file, naming the line number of the first bad row.

    Raises:
        TrajectoryParseError: on a bad header, wrong column count, a
            non-numeric field, or a gap in the time index.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise TrajectoryParseError(f"cannot read trajectory: {exc}", path=path) from exc
    lines = text.splitlines()
    header, meta = {}, {}
    i = 0
    while i < len(lines) and lines[i].startswith("#"):
        key, sep, value = lines[i][1:].strip().partition("=")
        if not sep:
            raise TrajectoryParseError("malformed header line", path=path, row=i + 1)
        (header if key in HEADER_KEYS else meta)[key] = value
        i += 1
    missing = [k for k in HEADER_KEYS if k not in header]
    if missing:
        raise TrajectoryParseError(f"header lacks {missing}", path=path, row=i + 1)
    if int(header["schema"]) != SCHEMA_VERSION:
        raise TrajectoryParseError(f"unsupported schema {header['schema']}", path=path, row=1)
    d = int(header["dimension"])
    expected = ["t"] + [f"s{j}" for j in range(d)] + ["action", "reward", "lyapunov", "norm", "delta", "samples"]
    if i >= len(lines) or lines[i].split(",") != expected:
        raise TrajectoryParseError("missing or unexpected column line", path=path, row=i + 1)
    i += 1

    body = [ln for ln in lines[i:]]
    n = len(body)
    if n == 0:
        raise TrajectoryParseError("no data rows", path=path, row=i + 1)
    states = np.empty((n, d))
    actions = np.empty(n, dtype=np.int64)
    rewards = np.empty(n)
    lyap = np.empty(n)
    deltas = np.empty(n)
    samples = np.zeros(n, dtype=np.int64)
    for r, ln in enumerate(body):
        lineno = i + r + 1
        parts = ln.split(",")
        if len(parts) != len(expected):
            raise TrajectoryParseError(
                f"expected {len(expected)} fields, found {len(parts)}", path=path, row=lineno)
        try:
            if int(parts[0]) != r:
                raise TrajectoryParseError(f"time index {parts[0]} out of sequence", path=path, row=lineno)
            states[r] = [float(x) for x in parts[1:1 + d]]
            actions[r] = int(parts[1 + d])
            rewards[r] = float(parts[2 + d]) if parts[2 + d] else math.nan
            lyap[r] = float(parts[3 + d])
            deltas[r] = float(parts[5 + d])
            samples[r] = int(parts[6 + d]) if parts[6 + d] else 0
        except ValueError as exc:
            raise TrajectoryParseError(f"bad field ({exc})", path=path, row=lineno) from exc
    if actions[-1] != -1:
        raise TrajectoryParseError("final row must hold the terminal state (action -1); file looks truncated",
                                   path=path, row=i + n)
    return TrajectoryRecord(
        states, actions, rewards, lyap, deltas, samples, env=header["env"],
        seed=int(header["seed"]), trial=int(header["trial"]), config_hash=header["config_hash"],
        horizon=int(header["horizon"]), status=header["status"], meta=meta)
