from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Literal, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import stats

from .analytic_moments import exact_weak_error_quadratic, quadratic_coefficient
from .errors import DomainError
from .gaussian_sampler import UniformGrid, get_joint_covariance
from .model import ModelConfig, is_constant_vol
from .scheme import DEFAULT_FINE_STEPS, STRONG_MIN_PATHS, Z95, coupled_level_terminals, strong_error

RateStatus = Literal["ok", "degenerate", "inconclusive"]

NOISE_GATE = 3.0
MIN_POINTS = 3


class ExperimentPlan(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    config: ModelConfig
    levels: list[int] = Field(default_factory=lambda: [16, 32, 64, 128, 256], min_length=1)
    N_f: int = Field(default=DEFAULT_FINE_STEPS, ge=1)
    M: int = Field(default=200_000, ge=1)
    seed: int = 0
    replications: int = Field(default=8, ge=1)
    threads: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def _check_levels(self) -> "ExperimentPlan":
        if any(n < 1 for n in self.levels):
            raise ValueError(f"levels must be positive: {self.levels}")
        if len(set(self.levels)) != len(self.levels):
            raise ValueError(f"levels must be distinct: {self.levels}")
        return self

    @property
    def sorted_levels(self) -> list[int]:
        return sorted(self.levels)

    def check_monte_carlo(self) -> None:
        top = max(self.levels)
        if self.N_f <= top:
            raise DomainError(f"fine level N_f={self.N_f} must exceed every level (max {top})")
        bad = [n for n in self.levels if self.N_f % n]
        if bad:
            raise DomainError(f"fine level N_f={self.N_f} is not a multiple of levels {bad}")


@dataclass
class LevelPoint:
    N: int
    error: float
    ci: float
    used: bool = True
    sign: int = 0
    oracle: float | None = None


@dataclass
class RateEstimate:
    status: RateStatus
    points: list[LevelPoint] = field(default_factory=list)
    slope: float | None = None
    intercept: float | None = None
    slope_stderr: float | None = None
    message: str = ""

    @property
    def used_levels(self) -> list[int]:
        return [p.N for p in self.points if p.used]

    @property
    def signs(self) -> str:
        return "".join("+" if p.sign > 0 else "-" if p.sign < 0 else "0" for p in self.points)

    def to_dict(self) -> dict[str, object]:
        return {
            "status": self.status,
            "slope": self.slope,
            "intercept": self.intercept,
            "slope_stderr": self.slope_stderr,
            "message": self.message,
            "signs": self.signs,
            "used_levels": self.used_levels,
            "points": [asdict(p) for p in self.points],
        }


def regress_loglog(points: Sequence[tuple[float, float, float]]) -> RateEstimate:
    """OLS of log error on log N."""
    ordered = sorted(points, key=lambda p: p[0])
    if len(ordered) < MIN_POINTS:
        raise DomainError(f"regression needs at least {MIN_POINTS} points, got {len(ordered)}")
    bad = [p for p in ordered if not p[1] > 0.0]
    if bad:
        raise DomainError(f"non-positive errors at levels {[p[0] for p in bad]}; widen M")
    logn = np.log([float(p[0]) for p in ordered])
    loge = np.log([float(p[1]) for p in ordered])
    fit = stats.linregress(logn, loge)
    stderr = float(fit.stderr)
    if not math.isfinite(stderr):
        stderr = 0.0
    return RateEstimate(
        status="ok",
        points=[LevelPoint(N=int(n), error=float(e), ci=float(c), sign=1) for n, e, c in ordered],
        slope=float(fit.slope),
        intercept=float(fit.intercept),
        slope_stderr=stderr,
    )


def _sign(value: float) -> int:
    return 1 if value > 0.0 else -1 if value < 0.0 else 0


def _finish(points: list[LevelPoint], gate: bool) -> RateEstimate:
    """Regress |error| over admissible levels and carry the full level table."""
    if all(p.error == 0.0 for p in points):
        for p in points:
            p.used = False
        return RateEstimate(status="degenerate", points=points, message="degenerate: zero error")
    for p in points:
        p.used = abs(p.error) > 0.0 and (not gate or abs(p.error) > NOISE_GATE * p.ci)
    usable = [p for p in points if p.used]
    if len(usable) < MIN_POINTS:
        return RateEstimate(
            status="inconclusive",
            points=points,
            message=f"only {len(usable)} level(s) clear the noise gate; increase M or replications",
        )
    fit = regress_loglog([(p.N, abs(p.error), p.ci) for p in usable])
    fit.points = points
    return fit


def constant_vol_estimate(levels: Sequence[int], oracles: dict[int, float] | None = None) -> RateEstimate:
    """Constant psi: every coupled level reproduces the reference, so there is nothing to regress."""
    points = [
        LevelPoint(N=N, error=0.0, ci=0.0, used=False, oracle=None if oracles is None else oracles[N]) for N in levels
    ]
    return RateEstimate(status="degenerate", points=points, message="degenerate: zero error (constant psi)")


def run_case1(plan: ExperimentPlan) -> RateEstimate:
    config = plan.config
    quadratic_coefficient(config)
    points = []
    for N in plan.sorted_levels:
        err = exact_weak_error_quadratic(config, UniformGrid(config.T, N))
        points.append(LevelPoint(N=N, error=err, ci=0.0, sign=_sign(err), oracle=err))
    estimate = _finish(points, gate=False)
    return estimate


def replication_seeds(seed: int, count: int) -> list[int]:
    children = np.random.SeedSequence(int(seed)).spawn(int(count))
    return [int(child.generate_state(1)[0]) for child in children]


def _replicate(plan: ExperimentPlan, worker) -> list:
    seeds = replication_seeds(plan.seed, plan.replications)
    workers = max(1, min(plan.threads, len(seeds)))
    if workers == 1:
        return [worker(s, plan.threads) for s in seeds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda s: worker(s, 1), seeds))


def _quadratic_oracles(plan: ExperimentPlan) -> dict[int, float] | None:
    config = plan.config
    try:
        quadratic_coefficient(config)
    except DomainError:
        return None
    fine = exact_weak_error_quadratic(config, UniformGrid(config.T, plan.N_f))
    return {N: exact_weak_error_quadratic(config, UniformGrid(config.T, N)) - fine for N in plan.levels}


def run_case2(plan: ExperimentPlan) -> RateEstimate:
    """E[phi(X^{N_f}_T)] - E[phi(X^N_T)] per level on coupled noise, R independent replications."""
    config = plan.config
    if config.zeta != 0.0:
        raise DomainError(f"weak-rate experiments use zeta = 0: zeta={config.zeta}")
    plan.check_monte_carlo()
    levels = plan.sorted_levels
    payoff = config.payoff
    if is_constant_vol(config.vol):
        return constant_vol_estimate(levels, _quadratic_oracles(plan))
    # one factor build shared by the replication threads
    get_joint_covariance(config.H, UniformGrid(config.T, plan.N_f))

    def one(seed: int, threads: int) -> tuple[np.ndarray, np.ndarray]:
        terms = coupled_level_terminals(config, levels, plan.N_f, plan.M, seed, threads)
        ref = np.asarray(payoff.phi(0, terms.reference))
        means = np.empty(len(levels))
        sds = np.empty(len(levels))
        for k, N in enumerate(levels):
            diff = ref - np.asarray(payoff.phi(0, terms.coarse[N]))
            means[k] = diff.mean()
            sds[k] = diff.std(ddof=1) if diff.size > 1 else 0.0
        return means, sds

    results = _replicate(plan, one)
    table = np.array([r[0] for r in results])
    R = table.shape[0]
    errors = table.mean(axis=0)
    if R > 1:
        cis = Z95 * table.std(axis=0, ddof=1) / math.sqrt(R)
    else:
        cis = Z95 * results[0][1] / math.sqrt(plan.M)
    oracles = _quadratic_oracles(plan)
    points = [
        LevelPoint(
            N=N,
            error=float(errors[k]),
            ci=float(cis[k]),
            sign=_sign(float(errors[k])),
            oracle=None if oracles is None else oracles[N],
        )
        for k, N in enumerate(levels)
    ]
    return _finish(points, gate=True)


def run_strong(plan: ExperimentPlan) -> RateEstimate:
    config = plan.config
    plan.check_monte_carlo()
    if plan.M < STRONG_MIN_PATHS:
        raise DomainError(f"strong error needs at least {STRONG_MIN_PATHS} paths: M={plan.M}")
    levels = plan.sorted_levels
    if is_constant_vol(config.vol):
        return constant_vol_estimate(levels)
    terms = coupled_level_terminals(config, levels, plan.N_f, plan.M, plan.seed, plan.threads)
    points = []
    for N in levels:
        rms, ci = strong_error(terms.sample(N))
        points.append(LevelPoint(N=N, error=rms, ci=ci, sign=_sign(rms)))
    return _finish(points, gate=True)


def level_table_rows(estimate: RateEstimate) -> list[tuple[object, ...]]:
    return [(p.N, p.error, p.ci, p.used, p.sign, p.oracle) for p in estimate.points]


LEVEL_TABLE_HEADER = ("N", "error", "ci", "used", "sign", "oracle")
