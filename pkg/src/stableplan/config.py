"""Experiment configuration: YAML on disk, validated pydantic models in memory.

Unknown keys anywhere are rejected.  Every section has defaults, so a
partial file (for example just ``oracle: {delta: 0.1}``) is a valid config.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class EnvironmentConfig(_Strict):
    kind: Literal["two_queue", "queue_network", "reflected_walk", "chain"] = "two_queue"
    arrival: list[float] = Field(default_factory=lambda: [0.3, 0.3])
    service: list[float] = Field(default_factory=lambda: [0.8, 0.8])
    reward_scale: float = 1.0
    p_up: float = 0.4
    stride: float = 1.0
    rewards: list[float] = Field(default_factory=lambda: [1.0])
    actions: int = 1
    gamma: float = 0.9
    initial_state: Optional[list[float]] = None

    @field_validator("gamma")
    @classmethod
    def _gamma(cls, v):
        if not 0.0 < v < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        return v


class OracleConfig(_Strict):
    """Planner parameters.

    With ``delta`` set, depth/width/spacing follow the accuracy formulas;
    ``horizon``, ``width`` and ``epsilon`` override them individually.
    """

    kind: Literal["grid", "vanilla"] = "grid"
    delta: Optional[float] = None
    horizon: Optional[int] = 3
    width: Optional[int] = 10
    epsilon: Optional[float] = 1.0
    zeta: float = 1.0
    reuse_cache: bool = False

    @field_validator("delta")
    @classmethod
    def _delta(cls, v):
        if v is not None and not 0.0 < v < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        return v


class PolicyConfig(_Strict):
    """How actions are picked.

    ``tau`` fixes the temperature; otherwise it comes from the drift
    margin ``alpha`` via the temperature rule, with ``nu`` taken from the
    Lyapunov section.  ``couple_delta`` sets oracle delta to ``tau ** 2``.
    """

    kind: Literal["planner", "uniform", "serve_longest"] = "planner"
    tau: Optional[float] = 0.3
    alpha: Optional[float] = None
    delta_min: Optional[float] = None
    couple_delta: bool = False

    @model_validator(mode="after")
    def _tau_source(self):
        if self.kind == "planner" and self.tau is None and (self.alpha is None or self.delta_min is None):
            raise ValueError("planner policy needs tau, or alpha together with delta_min")
        return self


class AdaptiveConfig(_Strict):
    enabled: bool = False
    t0: int = 10
    floor: float = 2.0 ** -20


class LyapunovConfig(_Strict):
    function: Literal["euclidean", "l1", "max"] = "euclidean"
    nu: float = 2.0 ** 0.5
    nu_prime: float = 2.0 ** 0.5
    B: float = 0.0
    alpha: float = 0.1
    c1: float = 1.0
    c2: float = 0.0


class LevelGrid(_Strict):
    start: float = 0.0
    stop: float = 100.0
    step: float = 1.0


class AnalysisConfig(_Strict):
    theta: float = 0.05
    levels: LevelGrid = LevelGrid()
    late_fraction: float = 0.25
    checkpoints: int = 20
    alpha_scale: float = 0.5
    rho_variant: Literal["proof", "statement"] = "proof"


class RunConfig(_Strict):
    seed: int = 0
    trials: int = 50
    horizon: int = 50_000
    workers: int = 1
    budget_cap: int = 1_000_000_000
    out: str = "runs/default"
    write_trajectories: bool = True

    @field_validator("trials", "horizon", "workers", "budget_cap")
    @classmethod
    def _positive(cls, v, info):
        if v < (0 if info.field_name == "horizon" else 1):
            raise ValueError(f"{info.field_name} out of range")
        return v


class ExperimentConfig(_Strict):
    environment: EnvironmentConfig = EnvironmentConfig()
    oracle: OracleConfig = OracleConfig()
    policy: PolicyConfig = PolicyConfig()
    adaptive: AdaptiveConfig = AdaptiveConfig()
    lyapunov: LyapunovConfig = LyapunovConfig()
    analysis: AnalysisConfig = AnalysisConfig()
    run: RunConfig = RunConfig()

    def with_overrides(self, **sections) -> "ExperimentConfig":
        """Copy with some fields replaced, e.g. ``run={"seed": 3}``."""
        data = self.model_dump()
        for section, values in sections.items():
            data[section].update({k: v for k, v in values.items() if v is not None})
        return ExperimentConfig.model_validate(data)

    def config_hash(self) -> str:
        """Digest of everything that can change results.

        Worker count and output path are excluded so that the same
        experiment hashes the same wherever and however it is run.
        """
        data = self.model_dump()
        data["run"].pop("workers")
        data["run"].pop("out")
        blob = json.dumps(data, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def to_yaml(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.model_dump(), sort_keys=True)


def from_yaml(text: str) -> ExperimentConfig:
    data = yaml.safe_load(text) or {}
    if not isinstance(data, dict):
        raise ValueError("config must be a mapping")
    return ExperimentConfig.model_validate(data)


def load_config(path) -> ExperimentConfig:
    return from_yaml(Path(path).read_text())
