from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DomainError
from .gaussian_sampler import (
    NoiseBundle,
    UniformGrid,
    coarsen_bundle,
    get_joint_covariance,
    refine_bundle_consistency,
    sample_bundle,
)
from .model import ModelConfig, is_constant_vol

DEFAULT_FINE_STEPS = 4096
BLOCK_PATHS = 1024
STRONG_MIN_PATHS = 100
STRONG_BATCHES = 20
Z95 = 1.96


@dataclass(frozen=True, eq=False)
class TerminalSample:
    xbar_T: np.ndarray
    x_ref_T: np.ndarray
    N: int
    N_f: int
    seed: int

    @property
    def M(self) -> int:
        return int(self.xbar_T.shape[0])


@dataclass(eq=False)
class LevelTerminals:
    """Terminal values of every coarse level and the fine reference on one shared noise sample."""

    levels: list[int]
    N_f: int
    seed: int
    reference: np.ndarray
    coarse: dict[int, np.ndarray] = field(default_factory=dict)

    def sample(self, N: int) -> TerminalSample:
        return TerminalSample(xbar_T=self.coarse[N], x_ref_T=self.reference, N=N, N_f=self.N_f, seed=self.seed)


def _check_bundle(bundle: NoiseBundle, config: ModelConfig) -> None:
    if not math.isclose(bundle.grid.T, config.T, rel_tol=1e-12):
        raise DomainError(f"bundle horizon {bundle.grid.T} differs from model horizon {config.T}")
    if bundle.rho != config.rho:
        raise DomainError(f"bundle correlation {bundle.rho} differs from model correlation {config.rho}")
    if bundle.H != config.H:
        raise DomainError(f"bundle Hurst exponent {bundle.H} differs from model H={config.H}")
    n = bundle.grid.N
    for name in ("V", "dW", "dB"):
        shape = getattr(bundle, name).shape
        if len(shape) != 2 or shape[1] != n:
            raise DomainError(f"bundle.{name} has shape {shape}, expected (M, {n})")


def left_endpoint_values(V: np.ndarray) -> np.ndarray:
    """V at t_0..t_{N-1} given columns t_1..t_N (V_{t_0} = 0)."""
    out = np.empty_like(V)
    out[:, 0] = 0.0
    out[:, 1:] = V[:, :-1]
    return out


def euler_increments(V_left: np.ndarray, dB: np.ndarray, dt: float, config: ModelConfig) -> np.ndarray:
    psi = np.asarray(config.vol.psi(0, V_left))
    steps = psi * dB
    if config.zeta != 0.0:
        steps = steps + config.zeta * psi * psi * dt
    return steps


def euler_terminal(bundle: NoiseBundle, config: ModelConfig) -> np.ndarray:
    """X_{i+1} = X_i + psi(V_{t_i}) dB_i + zeta psi(V_{t_i})^2 dt, returned at T."""
    _check_bundle(bundle, config)
    steps = euler_increments(left_endpoint_values(bundle.V), bundle.dB, bundle.grid.dt, config)
    return config.x0 + steps.sum(axis=1)


def coupled_level_terminals(
    config: ModelConfig,
    levels: Sequence[int],
    N_f: int,
    M: int,
    seed: int,
    threads: int = 1,
) -> LevelTerminals:
    """Sample once on the fine grid and evaluate every level on aggregated increments.

    With constant psi every level shares the fine terminal: the scheme is exact there.
    """
    if M < 1:
        raise DomainError(f"path count must be positive: M={M}")
    fine = UniformGrid(config.T, N_f)
    couplings = {int(N): refine_bundle_consistency(UniformGrid(config.T, int(N)), fine) for N in levels}
    exact = is_constant_vol(config.vol)
    spec = get_joint_covariance(config.H, fine)
    reference = np.empty(M, dtype=float)
    coarse = {N: np.empty(M, dtype=float) for N in couplings}
    for start in range(0, M, BLOCK_PATHS):
        count = min(BLOCK_PATHS, M - start)
        bundle = sample_bundle(spec, config.rho, count, seed, path_offset=start, threads=threads)
        reference[start : start + count] = euler_terminal(bundle, config)
        for N, coupling in couplings.items():
            if exact or coupling.is_identity:
                coarse[N][start : start + count] = reference[start : start + count]
            else:
                coarse[N][start : start + count] = euler_terminal(coarsen_bundle(bundle, coupling), config)
    return LevelTerminals(levels=list(couplings), N_f=N_f, seed=seed, reference=reference, coarse=coarse)


def coupled_terminals(
    config: ModelConfig,
    N: int,
    N_f: int = DEFAULT_FINE_STEPS,
    M: int = 10_000,
    seed: int = 0,
    threads: int = 1,
) -> TerminalSample:
    if N_f < N:
        raise DomainError(f"fine level N_f={N_f} must not be below N={N}")
    return coupled_level_terminals(config, [N], N_f, M, seed, threads).sample(N)


def batch_means(values: np.ndarray, batches: int = STRONG_BATCHES) -> np.ndarray:
    return np.array([chunk.mean() for chunk in np.array_split(values, batches)])


def strong_error(sample: TerminalSample) -> tuple[float, float]:
    """Root-mean-square terminal distance and its 95% half-width (delta method on batch means)."""
    if sample.M < STRONG_MIN_PATHS:
        raise DomainError(f"strong error needs at least {STRONG_MIN_PATHS} paths: M={sample.M}")
    sq = (sample.xbar_T - sample.x_ref_T) ** 2
    mean_sq = float(sq.mean())
    rms = math.sqrt(mean_sq)
    if rms == 0.0:
        return 0.0, 0.0
    means = batch_means(sq)
    se = float(np.std(means, ddof=1)) / math.sqrt(len(means))
    return rms, Z95 * se / (2.0 * rms)


def terminal_table(sample: TerminalSample) -> list[tuple[int, float, float]]:
    return [(p, float(sample.xbar_T[p]), float(sample.x_ref_T[p])) for p in range(sample.M)]
