"""Riemann-Liouville kernel K(t, s) = (t - s)^(H - 1/2) and its integrals.

All functions are pure. Quadrature panels are fixed-order Gauss-Legendre with
adaptive bisection; endpoint power singularities are removed by the
substitution x - a = v^(1/(e + 1)) before any node is placed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.special import betaln, roots_jacobi, roots_legendre

from .errors import DomainError, QuadratureError

QUAD_ABS_TOL = 1e-12
QUAD_ORDER = 20
QUAD_MAX_DEPTH = 52
QUAD_MAX_PANELS = 50_000

# uniform-grid covariance: cells [k, k+1] in units of dt
GRID_NEAR_CELLS = 8
GRID_NEAR_ORDER = 24
GRID_FAR_ORDER = 8

Integrand = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class KernelSpec:
    H: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.H) or not 0.0 < self.H <= 0.5:
            raise DomainError(f"Hurst exponent must lie in (0, 1/2]: H={self.H}")

    @property
    def h_plus(self) -> float:
        return self.H + 0.5

    @property
    def exponent(self) -> float:
        return self.H - 0.5

    @property
    def is_brownian(self) -> bool:
        return self.H == 0.5


@lru_cache(maxsize=32)
def gauss_legendre_unit(order: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = roots_legendre(order)
    nodes = 0.5 * (x + 1.0)
    weights = 0.5 * w
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


@lru_cache(maxsize=64)
def _jacobi_unit(order: int, power: float) -> tuple[np.ndarray, np.ndarray]:
    """Rule for int_0^1 u^power f(u) du."""
    x, w = roots_jacobi(order, 0.0, power)
    nodes = 0.5 * (x + 1.0)
    weights = w * 0.5 ** (power + 1.0)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def adaptive_gauss(
    f: Integrand,
    a: float,
    b: float,
    tol: float = QUAD_ABS_TOL,
    order: int = QUAD_ORDER,
    max_depth: int = QUAD_MAX_DEPTH,
) -> float:
    if b == a:
        return 0.0
    if b < a:
        return -adaptive_gauss(f, b, a, tol, order, max_depth)
    x, w = gauss_legendre_unit(order)
    span = b - a

    def panel(lo: float, hi: float) -> float:
        h = hi - lo
        return h * float(np.dot(w, f(lo + h * x)))

    accepted: list[float] = []
    stack = [(a, b, panel(a, b), 0)]
    panels = 0
    while stack:
        lo, hi, whole, depth = stack.pop()
        mid = 0.5 * (lo + hi)
        left = panel(lo, mid)
        right = panel(mid, hi)
        refined = left + right
        if not math.isfinite(refined):
            raise QuadratureError(f"non-finite integrand on [{lo!r}, {hi!r}]", {"a": a, "b": b})
        local_tol = max(tol * (hi - lo) / span, 64.0 * np.finfo(float).eps * abs(refined))
        if abs(refined - whole) <= local_tol:
            accepted.append(refined)
            continue
        panels += 1
        if depth >= max_depth or panels > QUAD_MAX_PANELS:
            raise QuadratureError(
                f"quadrature did not reach tolerance {tol:.1e} on [{a!r}, {b!r}] (depth {depth}, panels {panels})",
                {"a": a, "b": b, "tol": tol},
            )
        stack.append((lo, mid, left, depth + 1))
        stack.append((mid, hi, right, depth + 1))
    return math.fsum(accepted)


def integrate_left_singular(g: Integrand, a: float, b: float, power: float, tol: float = QUAD_ABS_TOL) -> float:
    """int_a^b (x - a)^power g(x) dx for power > -1."""
    if b <= a:
        return 0.0
    if power == 0.0:
        return adaptive_gauss(g, a, b, tol)
    p = power + 1.0
    inv = 1.0 / p
    return adaptive_gauss(lambda v: g(a + np.power(v, inv)), 0.0, (b - a) ** p, tol * p) / p


def integrate_right_singular(g: Integrand, a: float, b: float, power: float, tol: float = QUAD_ABS_TOL) -> float:
    """int_a^b (b - x)^power g(x) dx for power > -1."""
    if b <= a:
        return 0.0
    if power == 0.0:
        return adaptive_gauss(g, a, b, tol)
    p = power + 1.0
    inv = 1.0 / p
    return adaptive_gauss(lambda v: g(b - np.power(v, inv)), 0.0, (b - a) ** p, tol * p) / p


def k_eval(spec: KernelSpec, t: float | np.ndarray, s: float | np.ndarray) -> float | np.ndarray:
    t_arr = np.asarray(t, dtype=float)
    s_arr = np.asarray(s, dtype=float)
    if np.any(t_arr < 0.0) or np.any(s_arr < 0.0):
        raise DomainError("kernel arguments must be non-negative")
    lag = t_arr - s_arr
    inside = lag > 0.0
    out = np.where(inside, np.power(np.where(inside, lag, 1.0), spec.exponent), 0.0)
    return float(out) if out.ndim == 0 else out


def k_primitive(spec: KernelSpec, t: float, a: float, b: float) -> float:
    if a < 0.0 or b < a:
        raise DomainError(f"k_primitive needs 0 <= a <= b: a={a}, b={b}")
    if a >= t:
        return 0.0
    hp = spec.h_plus
    upper = min(b, t)
    return ((t - a) ** hp - (t - upper) ** hp) / hp


def kernel_sq_integral(spec: KernelSpec, t: float, s: float) -> float:
    """int_t^s K(r, t)^2 dr."""
    if s <= t:
        return 0.0
    return (s - t) ** (2.0 * spec.H) / (2.0 * spec.H)


def cov_vv(spec: KernelSpec, s: float, t: float) -> float:
    if s < 0.0 or t < 0.0:
        raise DomainError(f"covariance times must be non-negative: s={s}, t={t}")
    lo, hi = (s, t) if s <= t else (t, s)
    if lo == 0.0:
        return 0.0
    if lo == hi:
        return lo ** (2.0 * spec.H) / (2.0 * spec.H)
    if spec.is_brownian:
        return lo
    e = spec.exponent
    gap = hi - lo
    # u = lo - r turns the integrand into u^e (gap + u)^e on [0, lo]
    return integrate_left_singular(lambda u: np.power(gap + u, e), 0.0, lo, e)


def cov_vv_grid(spec: KernelSpec, n: int, dt: float) -> np.ndarray:
    """Cov(V_{i dt}, V_{j dt}) for i, j = 1..n.

    Uses Cov(V_{i dt}, V_{(i+d) dt}) = dt^{2H} sum_{k<i} int_k^{k+1} u^e (u + d)^e du,
    so one lag d costs one cumulative sum over unit cells.
    """
    if n < 1 or not dt > 0.0:
        raise DomainError(f"grid needs n >= 1 and dt > 0: n={n}, dt={dt}")
    H = spec.H
    idx = np.arange(1, n + 1, dtype=float)
    if spec.is_brownian:
        return np.minimum.outer(idx, idx) * dt

    e = spec.exponent
    out = np.empty((n, n), dtype=float)
    ju, jw = _jacobi_unit(GRID_NEAR_ORDER, e)
    nu, nw = gauss_legendre_unit(GRID_NEAR_ORDER)
    fu, fw = gauss_legendre_unit(GRID_FAR_ORDER)

    near = min(n, GRID_NEAR_CELLS)
    cells = np.arange(n, dtype=float)
    u_near = cells[1:near, None] + nu[None, :]
    u_far = cells[near:, None] + fu[None, :]
    near_base = np.power(u_near, e)
    far_base = np.power(u_far, e)

    for lag in range(1, n):
        m = n - lag
        cell = np.empty(m, dtype=float)
        cell[0] = float(np.dot(jw, np.power(ju + lag, e)))
        if m > 1:
            top = min(m, near)
            cell[1:top] = (near_base[: top - 1] * np.power(u_near[: top - 1] + lag, e)) @ nw
            if m > near:
                cell[near:m] = (far_base[: m - near] * np.power(u_far[: m - near] + lag, e)) @ fw
        band = np.cumsum(cell)
        rows = np.arange(m)
        out[rows, rows + lag] = band
        out[rows + lag, rows] = band

    np.fill_diagonal(out, idx ** (2.0 * H) / (2.0 * H))
    return out * dt ** (2.0 * H)


def cell_mean_weights(spec: KernelSpec, n: int, dt: float) -> np.ndarray:
    """(1/dt) int_{(m-1)dt}^{m dt} u^e du for lags m = 1..n."""
    hp = spec.h_plus
    m = np.arange(1, n + 1, dtype=float)
    return dt ** spec.exponent * (m**hp - (m - 1.0) ** hp) / hp


def cell_sq_weights(spec: KernelSpec, n: int, dt: float) -> np.ndarray:
    """int_{(m-1)dt}^{m dt} u^{2e} du for lags m = 1..n."""
    two_h = 2.0 * spec.H
    m = np.arange(1, n + 1, dtype=float)
    return dt**two_h * (m**two_h - (m - 1.0) ** two_h) / two_h


def beta_identity(spec: KernelSpec, t: float, beta: float) -> float:
    if beta <= -1.0:
        raise DomainError(f"beta must exceed -1: beta={beta}")
    return math.exp(betaln(spec.h_plus, beta + 1.0)) * t ** (beta + spec.h_plus)


def weighted_kernel_integral(spec: KernelSpec, t: float, beta: float) -> float:
    """int_0^t K(t, r) r^beta dr, split at t/2 so each half has one endpoint singularity."""
    if beta <= -1.0:
        raise DomainError(f"beta must exceed -1: beta={beta}")
    if not t > 0.0:
        raise DomainError(f"t must be positive: t={t}")
    e = spec.exponent
    half = 0.5 * t
    left = integrate_left_singular(lambda r: np.power(t - r, e), 0.0, half, beta)
    right = integrate_right_singular(lambda r: np.power(r, beta), half, t, e)
    return left + right


def delta_k_weighted_integral(spec: KernelSpec, t: float, t_i: float, alpha: float) -> float:
    """int_0^t |K(t, r) - K(t_i, r)| (t - r)^alpha dr."""
    if alpha < 0.0:
        raise DomainError(f"alpha must be non-negative: alpha={alpha}")
    if t_i < 0.0 or t_i > t:
        raise DomainError(f"need 0 <= t_i <= t: t={t}, t_i={t_i}")
    if t_i == t:
        return 0.0
    e = spec.exponent
    p = spec.h_plus + alpha
    gap = t - t_i
    # [t_i, t): K(t_i, .) vanishes
    tail = gap**p / p
    if spec.is_brownian or t_i == 0.0:
        return tail
    # [0, t_i): K(t_i, r) >= K(t, r), split into the singular part and a closed form
    singular = integrate_right_singular(lambda r: np.power(t - r, alpha), 0.0, t_i, e)
    smooth = (t**p - gap**p) / p
    return tail + max(singular - smooth, 0.0)


def delta_k_exponent(spec: KernelSpec, alpha: float) -> float:
    return min(1.0, alpha + spec.h_plus)


def delta_k_closed_form(spec: KernelSpec, t: float, t_i: float) -> float:
    """delta_k_weighted_integral at alpha = 0."""
    if t_i < 0.0 or t_i > t:
        raise DomainError(f"need 0 <= t_i <= t: t={t}, t_i={t_i}")
    hp = spec.h_plus
    return (2.0 * (t - t_i) ** hp + t_i**hp - t**hp) / hp
