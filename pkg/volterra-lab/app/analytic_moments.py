"""Closed-form Gaussian oracles for V_t ~ N(0, t^{2H} / (2H)) and the noise-free
weak error of the Euler scheme for quadratic payoffs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.special import factorial2

from .errors import DomainError, QuadratureError
from .gaussian_sampler import UniformGrid
from .kernel import gauss_legendre_unit
from .model import ExponentialVol, ModelConfig, MonomialPayoff, PolynomialVol, QuadraticPayoff, ShiftedLinearVol, VolSpec

CELL_ORDER = 20
FIRST_CELL_HALVINGS = 60
REGULARITY_SUBPOINTS = 16

ArrayLike = float | np.ndarray


def _out(values: np.ndarray) -> ArrayLike:
    return float(values) if np.ndim(values) == 0 else values


def _check_t(t: ArrayLike) -> np.ndarray:
    arr = np.asarray(t, dtype=float)
    if np.any(arr < 0.0):
        raise DomainError("time must be non-negative")
    return arr


def v_variance(H: float, t: ArrayLike) -> ArrayLike:
    arr = _check_t(t)
    return _out(np.power(arr, 2.0 * H) / (2.0 * H))


@lru_cache(maxsize=64)
def _gaussian_moment_factor(p: int) -> float:
    if p == 0:
        return 1.0
    return float(factorial2(p - 1, exact=True))


def v_moment(H: float, t: ArrayLike, p: int) -> ArrayLike:
    if int(p) != p or p < 0:
        raise DomainError(f"moment order must be a non-negative integer: p={p}")
    var = np.asarray(v_variance(H, t), dtype=float)
    if p % 2:
        return _out(np.zeros_like(var))
    return _out(_gaussian_moment_factor(int(p)) * np.power(var, p // 2))


def v_expmoment(H: float, t: ArrayLike, nu: float) -> ArrayLike:
    var = np.asarray(v_variance(H, t), dtype=float)
    return _out(np.exp(0.5 * nu * nu * var))


def _polynomial_mean(coefficients: np.ndarray, H: float, t: ArrayLike) -> ArrayLike:
    var = np.asarray(v_variance(H, t), dtype=float)
    total = np.zeros_like(var)
    for k in range(0, len(coefficients), 2):
        if coefficients[k] != 0.0:
            total = total + coefficients[k] * _gaussian_moment_factor(k) * np.power(var, k // 2)
    return _out(total)


@lru_cache(maxsize=128)
def _squared_coefficients(coefficients: tuple[float, ...]) -> np.ndarray:
    out = P.polymul(np.asarray(coefficients, dtype=float), np.asarray(coefficients, dtype=float))
    out.setflags(write=False)
    return out


def expected_psi(vol: VolSpec, H: float, t: ArrayLike) -> ArrayLike:
    if isinstance(vol, ExponentialVol):
        return _out(vol.scale * np.asarray(v_expmoment(H, t, vol.nu)))
    if isinstance(vol, PolynomialVol):
        return _polynomial_mean(np.asarray(vol.coefficients, dtype=float), H, t)
    if isinstance(vol, ShiftedLinearVol):
        return _out(np.full_like(_check_t(t), vol.a))
    raise DomainError(f"no closed-form mean for volatility family {type(vol).__name__}")


def expected_psi_sq(vol: VolSpec, H: float, t: ArrayLike) -> ArrayLike:
    if isinstance(vol, ExponentialVol):
        return _out(vol.scale**2 * np.asarray(v_expmoment(H, t, 2.0 * vol.nu)))
    if isinstance(vol, PolynomialVol):
        return _polynomial_mean(_squared_coefficients(tuple(vol.coefficients)), H, t)
    if isinstance(vol, ShiftedLinearVol):
        return _out(vol.a**2 + vol.b**2 * np.asarray(v_variance(H, t)))
    raise DomainError(f"no closed-form second moment for volatility family {type(vol).__name__}")


def quadratic_coefficient(config: ModelConfig) -> float:
    payoff = config.payoff
    if isinstance(payoff, QuadraticPayoff):
        return payoff.a
    if isinstance(payoff, MonomialPayoff) and payoff.n == 2:
        return 1.0
    raise DomainError(f"payoff {payoff.family} is not quadratic")


def _riemann_gap(g, H: float, grid: UniformGrid) -> float:
    """int_0^T g - sum_i g(t_i) dt, cell by cell as int (g(t) - g(t_i)) dt."""
    x, w = gauss_legendre_unit(CELL_ORDER)
    dt = grid.dt
    left = grid.nodes[:-1]
    parts: list[float] = []

    # first cell: g(t) - g(0) behaves like t^{2H}, panels halve toward 0
    g0 = float(g(np.asarray(0.0)))
    hi = dt
    for _ in range(FIRST_CELL_HALVINGS):
        lo = 0.5 * hi
        nodes = lo + (hi - lo) * x
        parts.append((hi - lo) * float(np.dot(w, np.asarray(g(nodes)) - g0)))
        hi = lo
    if grid.N > 1:
        starts = left[1:, None]
        nodes = starts + dt * x[None, :]
        values = np.asarray(g(nodes)) - np.asarray(g(left[1:]))[:, None]
        parts.extend((dt * (values @ w)).tolist())
    total = math.fsum(parts)
    if not math.isfinite(total):
        raise QuadratureError(f"weak-error quadrature produced {total} (H={H}, N={grid.N})")
    return total


def exact_weak_error_quadratic(config: ModelConfig, grid: UniformGrid) -> float:
    if config.zeta != 0.0:
        raise DomainError(f"analytic weak error needs zeta = 0: zeta={config.zeta}")
    a = quadratic_coefficient(config)
    if not math.isclose(grid.T, config.T):
        raise DomainError(f"grid horizon {grid.T} differs from model horizon {config.T}")
    H = config.H
    vol = config.vol
    return a * _riemann_gap(lambda t: expected_psi_sq(vol, H, t), H, grid)


def geometric_weak_error(rate: float, T: float, N: int) -> float:
    """Left-Riemann gap of g(t) = exp(rate t): (e^{rate T} - 1)/rate - dt (e^{rate T} - 1)/(e^{rate dt} - 1)."""
    if rate == 0.0:
        return 0.0
    dt = T / N
    growth = math.expm1(rate * T)
    return growth / rate - dt * growth / math.expm1(rate * dt)


@dataclass
class RegularityEntry:
    name: str
    constant: float
    cell: int
    time: float


@dataclass
class WeakRegularityReport:
    H: float
    N: int
    entries: list[RegularityEntry] = field(default_factory=list)

    def constant(self, name: str) -> float:
        for entry in self.entries:
            if entry.name == name:
                return entry.constant
        raise KeyError(name)

    def to_dict(self) -> dict[str, object]:
        return {
            "H": self.H,
            "N": self.N,
            "entries": [entry.__dict__.copy() for entry in self.entries],
        }


def verify_weak_regularity(
    vol: VolSpec, H: float, grid: UniformGrid, subpoints: int = REGULARITY_SUBPOINTS
) -> WeakRegularityReport:
    """Smallest C with |E g(V_t) - E g(V_{t_i})| <= C (t^{2H} - t_i^{2H}) on a lattice, g in {psi, psi^2}."""
    left = grid.nodes[:-1]
    frac = np.arange(1, subpoints + 1, dtype=float) / (subpoints + 1)
    times = left[:, None] + grid.dt * frac[None, :]
    denom = np.power(times, 2.0 * H) - np.power(left, 2.0 * H)[:, None]
    report = WeakRegularityReport(H=H, N=grid.N)
    for name, mean in (("psi", expected_psi), ("psi_sq", expected_psi_sq)):
        gap = np.abs(np.asarray(mean(vol, H, times)) - np.asarray(mean(vol, H, left))[:, None])
        ratio = np.where(denom > 0.0, gap / np.where(denom > 0.0, denom, 1.0), 0.0)
        flat = int(np.argmax(ratio))
        cell, sub = divmod(flat, subpoints)
        report.entries.append(
            RegularityEntry(name=name, constant=float(ratio.flat[flat]), cell=cell, time=float(times[cell, sub]))
        )
    return report


def trick_rate_one_check(gamma: float, T: float, N: int) -> tuple[float, float]:
    if not gamma > 0.0:
        raise DomainError(f"gamma must be positive: gamma={gamma}")
    if N < 1 or not T > 0.0:
        raise DomainError(f"need N >= 1 and T > 0: N={N}, T={T}")
    dt = T / N
    g1 = gamma + 1.0
    terms = []
    for i in range(N):
        lo = i * dt
        hi = T if i == N - 1 else (i + 1) * dt
        terms.append((hi**g1 - lo**g1) / g1 - lo**gamma * dt)
    return math.fsum(terms), T**g1 * dt
