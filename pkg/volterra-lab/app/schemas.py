from __future__ import annotations

from typing import Annotated, Any, Literal, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .model import ModelConfig
from .rate_lab import ExperimentPlan
from .scheme import DEFAULT_FINE_STEPS

CommandName = Literal["kernels", "sample", "weak-rate", "strong-rate", "ppde", "telescope"]
RunStatus = Literal["ok", "degenerate", "inconclusive", "failed"]


class _Config(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


def _check_rate_levels(levels: list[int]) -> None:
    if any(n < 1 for n in levels):
        raise ValueError(f"levels must be positive: {levels}")
    if len(set(levels)) != len(levels):
        raise ValueError(f"levels must be distinct: {levels}")


class KernelsConfig(_Config):
    command: Literal["kernels"] = "kernels"
    H: list[float] = Field(default_factory=lambda: [0.1, 0.2, 0.3, 0.4, 0.5], min_length=1)
    t: list[float] = Field(default_factory=lambda: [0.25, 0.5, 1.0], min_length=1)
    beta: list[float] = Field(default_factory=lambda: [0.0, 0.5, 1.0, 2.0])
    alpha: list[float] = Field(default_factory=lambda: [0.0])
    levels: list[int] = Field(default_factory=lambda: [8, 16, 32, 64, 128, 256, 512], min_length=1)
    T: float = Field(default=1.0, gt=0.0)
    seed: int = 0

    @model_validator(mode="after")
    def _check(self) -> "KernelsConfig":
        if any(not 0.0 < h <= 0.5 for h in self.H):
            raise ValueError(f"every H must lie in (0, 1/2]: {self.H}")
        if any(not t > 0.0 for t in self.t):
            raise ValueError(f"times must be positive: {self.t}")
        if any(b <= -1.0 for b in self.beta):
            raise ValueError(f"beta must exceed -1: {self.beta}")
        if any(a < 0.0 for a in self.alpha):
            raise ValueError(f"alpha must be non-negative: {self.alpha}")
        if any(n < 1 for n in self.levels):
            raise ValueError(f"levels must be positive: {self.levels}")
        return self


class SampleConfig(_Config):
    command: Literal["sample"] = "sample"
    config: ModelConfig = Field(default_factory=ModelConfig)
    N: int = Field(default=16, ge=1)
    M: int = Field(default=200_000, ge=1)
    seed: int = 0
    threads: int | None = Field(default=None, ge=1)
    export_paths: int = Field(default=0, ge=0, description="rows of the raw path CSV, 0 to skip")


class WeakRateConfig(_Config):
    command: Literal["weak-rate"] = "weak-rate"
    case: Literal["case1", "case2"] = "case1"
    config: ModelConfig = Field(default_factory=ModelConfig)
    levels: list[int] = Field(default_factory=lambda: [16, 32, 64, 128, 256], min_length=1)
    N_f: int = Field(default=DEFAULT_FINE_STEPS, ge=1)
    M: int = Field(default=200_000, ge=1)
    replications: int = Field(default=8, ge=1)
    seed: int = 0
    threads: int | None = Field(default=None, ge=1)

    @model_validator(mode="after")
    def _check_levels(self) -> "WeakRateConfig":
        _check_rate_levels(self.levels)
        return self

    def plan(self, threads: int) -> ExperimentPlan:
        return ExperimentPlan(
            config=self.config,
            levels=self.levels,
            N_f=self.N_f,
            M=self.M,
            seed=self.seed,
            replications=self.replications,
            threads=threads,
        )


class StrongRateConfig(_Config):
    command: Literal["strong-rate"] = "strong-rate"
    config: ModelConfig = Field(default_factory=lambda: ModelConfig(H=0.2))
    levels: list[int] = Field(default_factory=lambda: [16, 32, 64, 128, 256, 512], min_length=1)
    N_f: int = Field(default=DEFAULT_FINE_STEPS, ge=1)
    M: int = Field(default=10_000, ge=1)
    seed: int = 0
    threads: int | None = Field(default=None, ge=1)
    export_terminals: int | None = Field(default=None, description="level whose raw terminals are written")

    def plan(self, threads: int) -> ExperimentPlan:
        return ExperimentPlan(
            config=self.config, levels=self.levels, N_f=self.N_f, M=self.M, seed=self.seed, replications=1, threads=threads
        )

    @model_validator(mode="after")
    def _check_export(self) -> "StrongRateConfig":
        _check_rate_levels(self.levels)
        if self.export_terminals is not None and self.export_terminals not in self.levels:
            raise ValueError(f"export_terminals={self.export_terminals} is not one of the levels {self.levels}")
        return self


class TowerConfig(_Config):
    t_next: float
    M_outer: int = Field(default=200, ge=2)
    M_inner: int = Field(default=500, ge=1)
    M_direct: int = Field(default=100_000, ge=1)


class PpdeConfig(_Config):
    command: Literal["ppde"] = "ppde"
    config: ModelConfig = Field(default_factory=ModelConfig)
    t: float = Field(default=0.0, ge=0.0)
    x: float | None = None
    n: int = Field(default=64, ge=0, description="sub-grid steps on [t, T]")
    curve: list[float] | None = None
    curve_csv: str | None = None
    curve_level: float = 0.0
    direction: list[float] | None = None
    bump: float = Field(default=1e-3, gt=0.0)
    residual: bool = True
    tower: TowerConfig | None = None
    M: int = Field(default=100_000, ge=1)
    seed: int = 0
    threads: int | None = Field(default=None, ge=1)

    @model_validator(mode="after")
    def _check(self) -> "PpdeConfig":
        if self.t > self.config.T:
            raise ValueError(f"t={self.t} exceeds the horizon T={self.config.T}")
        if self.curve is not None and self.curve_csv is not None:
            raise ValueError("give either curve or curve_csv, not both")
        if self.curve is not None and len(self.curve) != self.n + 1:
            raise ValueError(f"curve has {len(self.curve)} values, expected n + 1 = {self.n + 1}")
        if self.direction is not None and len(self.direction) != self.n + 1:
            raise ValueError(f"direction has {len(self.direction)} values, expected n + 1 = {self.n + 1}")
        return self

    @property
    def start(self) -> float:
        return self.config.x0 if self.x is None else self.x


class TelescopeConfig(_Config):
    command: Literal["telescope"] = "telescope"
    config: ModelConfig = Field(default_factory=lambda: ModelConfig(H=0.3, rho=-0.7, payoff={"family": "monomial", "n": 3}))
    N: int = Field(default=2, ge=2, le=4)
    sub_steps: int = Field(default=8, ge=1)
    M_outer: int = Field(default=2_000, ge=2)
    M_inner: int = Field(default=200, ge=1)
    budget_seconds: float = Field(default=600.0, gt=0.0)
    seed: int = 0
    threads: int | None = Field(default=None, ge=1)


CommandConfig = Annotated[
    Union[KernelsConfig, SampleConfig, WeakRateConfig, StrongRateConfig, PpdeConfig, TelescopeConfig],
    Field(discriminator="command"),
]


class RunManifest(BaseModel):
    command: CommandName
    config_hash: str
    seed: int
    started_at: str
    finished_at: str
    status: RunStatus
    exit_code: int
    artifacts: list[str] = Field(default_factory=list)
    software_version: str
    rng: str
    config: dict[str, Any]
    error: str = ""
