"""Monte Carlo value function u(t, x, omega) of the log-price and its pathwise derivatives.

The state at time t is the log-price x and the forward curve omega on a
uniform sub-grid s_0 = t < ... < s_n = T. Conditional paths are
V_s = omega_s + I_s with I_s = int_t^s K(s, r) dW_r, sampled exactly with the
same joint factorization as the unconditional process (the kernel is
stationary in its first slot). Stochastic integrals in every weight are
left-endpoint sums on that sub-grid.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np

from .errors import DomainError
from .gaussian_sampler import (
    UniformGrid,
    conditional_theta,
    get_joint_covariance,
    refine_bundle_consistency,
    coarsen_bundle,
    sample_bundle,
    sample_bundle_from,
)
from .kernel import KernelSpec, cell_mean_weights, cell_sq_weights
from .model import ModelConfig
from .scheme import Z95, euler_increments, euler_terminal, left_endpoint_values
from .storage import read_csv

MIN_SUBSTEPS = 8
DEFAULT_BUMP = 1e-3
TELESCOPE_SUBSTEPS = 8
TELESCOPE_BLOCK = 256
TELESCOPE_BUDGET_SECONDS = 600.0
TELESCOPE_INNER_STREAM = 1
TOWER_INNER_STREAM = 2

CheckStatus = Literal["ok", "inconclusive"]


@dataclass(frozen=True)
class Estimate:
    mean: float
    ci: float

    def to_dict(self) -> dict[str, float]:
        return {"value": self.mean, "ci": self.ci}


def estimate(values: np.ndarray) -> Estimate:
    arr = np.asarray(values, dtype=float).ravel()
    if arr.size == 0:
        raise DomainError("cannot estimate from an empty sample")
    if np.all(arr == arr[0]):
        return Estimate(float(arr[0]), 0.0)
    ci = Z95 * float(arr.std(ddof=1)) / math.sqrt(arr.size) if arr.size > 1 else 0.0
    return Estimate(float(arr.mean()), ci)


def combined_ci(*parts: Estimate) -> float:
    return math.sqrt(sum(p.ci * p.ci for p in parts))


@dataclass(frozen=True, eq=False)
class ForwardCurve:
    t: float
    T: float
    values: np.ndarray

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1 or vals.size < 1:
            raise DomainError("forward curve needs a 1-D array of node values")
        if not np.all(np.isfinite(vals)):
            raise DomainError("forward curve values must be finite")
        if vals.size == 1 and not math.isclose(self.t, self.T, rel_tol=0.0, abs_tol=1e-14 * max(1.0, self.T)):
            raise DomainError(f"a single-node curve needs t = T: t={self.t}, T={self.T}")
        if vals.size > 1 and not self.t < self.T:
            raise DomainError(f"forward curve needs t < T: t={self.t}, T={self.T}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def n(self) -> int:
        return int(self.values.size - 1)

    @property
    def ds(self) -> float:
        return (self.T - self.t) / self.n if self.n else 0.0

    @property
    def nodes(self) -> np.ndarray:
        out = self.t + np.arange(self.n + 1, dtype=float) * self.ds
        out[-1] = self.T
        return out

    @property
    def current(self) -> float:
        return float(self.values[0])

    @classmethod
    def constant(cls, t: float, T: float, n: int, level: float = 0.0) -> "ForwardCurve":
        return cls(t=t, T=T, values=np.full(n + 1, float(level)))

    @classmethod
    def from_function(cls, t: float, T: float, n: int, fn) -> "ForwardCurve":
        nodes = t + np.arange(n + 1, dtype=float) * ((T - t) / n)
        nodes[-1] = T
        return cls(t=t, T=T, values=np.asarray(fn(nodes), dtype=float))

    @classmethod
    def from_csv(cls, path: Path) -> "ForwardCurve":
        header, rows = read_csv(path)
        try:
            s_col = header.index("s")
            w_col = header.index("omega")
        except ValueError as exc:
            raise DomainError(f"curve CSV {path} needs columns 's' and 'omega'") from exc
        s = np.array([float(r[s_col]) for r in rows])
        w = np.array([float(r[w_col]) for r in rows])
        if s.size < 1:
            raise DomainError(f"curve CSV {path} has no rows")
        if s.size > 1:
            steps = np.diff(s)
            if np.any(steps <= 0.0) or not np.allclose(steps, steps[0], rtol=1e-9, atol=0.0):
                raise DomainError(f"curve CSV {path} is not on a uniform increasing grid")
        return cls(t=float(s[0]), T=float(s[-1]), values=w)

    def shifted(self, eps: float, direction: np.ndarray) -> "ForwardCurve":
        return ForwardCurve(t=self.t, T=self.T, values=self.values + eps * np.asarray(direction, dtype=float))

    def restrict(self, k: int) -> "ForwardCurve":
        if not 0 <= k <= self.n:
            raise DomainError(f"cannot restrict a {self.n}-step curve at node {k}")
        return ForwardCurve(t=float(self.nodes[k]), T=self.T, values=self.values[k:].copy())


@dataclass(frozen=True, eq=False)
class Direction:
    """Perturbation of the curve: node values, or the singular kernel K(., t)."""

    values: np.ndarray | None = None
    singular: bool = False

    @classmethod
    def singular_kernel(cls) -> "Direction":
        return cls(values=None, singular=True)

    @classmethod
    def along(cls, values) -> "Direction":
        arr = np.asarray(values, dtype=float)
        if arr.ndim != 1 or not np.all(np.isfinite(arr)):
            raise DomainError("a continuous direction needs finite node values")
        return cls(values=arr, singular=False)

    def _node_values(self, n: int) -> np.ndarray:
        if self.values is None or self.values.size != n + 1:
            size = None if self.values is None else self.values.size
            raise DomainError(f"direction has {size} values, curve has {n + 1} nodes")
        return self.values

    def first_order_weights(self, H: float, n: int, ds: float) -> np.ndarray:
        if self.singular:
            # cell means of K(s, t) over [s_j, s_{j+1}]; finite on the first cell
            return cell_mean_weights(KernelSpec(H), n, ds)
        return self._node_values(n)[:n]

    def second_order_weights(self, H: float, n: int, ds: float) -> np.ndarray:
        """Per-cell weights for int eta_s^2 ds."""
        if self.singular:
            return cell_sq_weights(KernelSpec(H), n, ds)
        return self._node_values(n)[:n] ** 2 * ds


@dataclass(frozen=True, eq=False)
class ConditionalSample:
    t: float
    x: float
    curve: ForwardCurve
    config: ModelConfig
    I: np.ndarray
    V: np.ndarray
    dW: np.ndarray
    dB: np.ndarray
    X_T: np.ndarray

    @property
    def M(self) -> int:
        return int(self.X_T.shape[0])

    @property
    def n(self) -> int:
        return self.curve.n

    @property
    def ds(self) -> float:
        return self.curve.ds

    @property
    def is_terminal(self) -> bool:
        return self.n == 0

    def terminal(
        self,
        x: float | None = None,
        curve_values: np.ndarray | None = None,
        steps: int | None = None,
        shift: int = 0,
    ) -> np.ndarray:
        """Reprice X_T on the stored noise; curve node j + shift pairs with I_j."""
        start = self.x if x is None else x
        omega = self.curve.values if curve_values is None else np.asarray(curve_values, dtype=float)
        count = self.n if steps is None else steps
        if count == 0:
            return np.full(self.M, float(start))
        V = omega[shift : shift + count][None, :] + self.I[:, :count]
        return start + euler_increments(V, self.dB[:, :count], self.ds, self.config).sum(axis=1)


def simulate_conditional(
    t: float,
    x: float,
    curve: ForwardCurve,
    config: ModelConfig,
    M: int,
    seed: int = 0,
    threads: int = 1,
    rng: np.random.Generator | None = None,
    min_steps: int = MIN_SUBSTEPS,
) -> ConditionalSample:
    if M < 1:
        raise DomainError(f"path count must be positive: M={M}")
    if not math.isclose(curve.t, t, rel_tol=0.0, abs_tol=1e-12 * max(1.0, config.T)):
        raise DomainError(f"curve starts at {curve.t}, state time is {t}")
    if not math.isclose(curve.T, config.T, rel_tol=1e-12):
        raise DomainError(f"curve ends at {curve.T}, model horizon is {config.T}")
    n = curve.n
    if n == 0:
        empty = np.zeros((M, 0))
        return ConditionalSample(
            t=t, x=x, curve=curve, config=config, I=empty, V=empty, dW=empty, dB=empty, X_T=np.full(M, float(x))
        )
    if n < min_steps:
        raise DomainError(f"sub-grid needs at least {min_steps} steps: n={n}")
    grid = UniformGrid(curve.T - curve.t, n)
    spec = get_joint_covariance(config.H, grid)
    if rng is None:
        bundle = sample_bundle(spec, config.rho, M, seed, threads=threads)
    else:
        bundle = sample_bundle_from(spec, config.rho, M, rng)
    I = left_endpoint_values(bundle.V)
    V = curve.values[None, :n] + I
    X_T = x + euler_increments(V, bundle.dB, grid.dt, config).sum(axis=1)
    return ConditionalSample(t=t, x=x, curve=curve, config=config, I=I, V=V, dW=bundle.dW, dB=bundle.dB, X_T=X_T)


def _phi(sample: ConditionalSample, order: int, values: np.ndarray | None = None) -> np.ndarray:
    return np.asarray(sample.config.payoff.phi(order, sample.X_T if values is None else values))


def u_hat(sample: ConditionalSample) -> Estimate:
    return estimate(_phi(sample, 0))


def du_dx_hat(sample: ConditionalSample) -> Estimate:
    return estimate(_phi(sample, 1))


def d2u_dx2_hat(sample: ConditionalSample) -> Estimate:
    return estimate(_phi(sample, 2))


def _integrand(sample: ConditionalSample) -> np.ndarray:
    """psi'(V_j) dB_j + zeta (psi^2)'(V_j) ds per path and cell."""
    vol = sample.config.vol
    g = np.asarray(vol.psi(1, sample.V)) * sample.dB
    if sample.config.zeta != 0.0:
        g = g + sample.config.zeta * np.asarray(vol.psi_sq(1, sample.V)) * sample.ds
    return g


def direction_weight(sample: ConditionalSample, direction: Direction) -> np.ndarray:
    """int psi'(V) eta dB + zeta int (psi^2)'(V) eta ds, per path."""
    if sample.is_terminal:
        return np.zeros(sample.M)
    w = direction.first_order_weights(sample.config.H, sample.n, sample.ds)
    return _integrand(sample) @ w


def domega_u_hat(sample: ConditionalSample, direction: Direction) -> Estimate:
    return estimate(_phi(sample, 1) * direction_weight(sample, direction))


def domega_dx_u_hat(sample: ConditionalSample, direction: Direction) -> Estimate:
    return estimate(_phi(sample, 2) * direction_weight(sample, direction))


def malliavin_kernel_matrix(H: float, n: int, ds: float) -> np.ndarray:
    """Entry (l, j) is the cell-mean of K(s_l, .) over cell j, zero unless l > j."""
    weights = cell_mean_weights(KernelSpec(H), n, ds)
    lag = np.arange(n)[:, None] - np.arange(n)[None, :]
    return np.where(lag > 0, weights[np.clip(lag - 1, 0, n - 1)], 0.0)


def malliavin_derivative(sample: ConditionalSample) -> np.ndarray:
    """D_{s_j} X_T = rho psi(V_j) + sum_{l > j} K(s_l, s_j) [psi'(V_l) dB_l + zeta (psi^2)'(V_l) ds]."""
    cfg = sample.config
    kmat = malliavin_kernel_matrix(cfg.H, sample.n, sample.ds)
    return cfg.rho * np.asarray(cfg.vol.psi(0, sample.V)) + _integrand(sample) @ kmat


def d2omega_terms(sample: ConditionalSample, direction: Direction) -> dict[str, np.ndarray]:
    """Per-path pieces of <d^2_omega u, (eta, eta)>, second-order stochastic integral moved to ds by parts."""
    if sample.is_terminal:
        zero = np.zeros(sample.M)
        return {"quadratic": zero, "malliavin": zero, "drift": zero}
    cfg = sample.config
    vol = cfg.vol
    H, n, ds = cfg.H, sample.n, sample.ds
    A = direction_weight(sample, direction)
    w2 = direction.second_order_weights(H, n, ds)
    phi1 = _phi(sample, 1)
    phi2 = _phi(sample, 2)
    psi = np.asarray(vol.psi(0, sample.V))
    psi2 = np.asarray(vol.psi(2, sample.V))
    quadratic = phi2 * A * A
    if np.any(phi2 != 0.0) and np.any(psi2 != 0.0):
        D = malliavin_derivative(sample)
        inner = (psi2 * (cfg.rho * D + cfg.rho_bar**2 * psi)) @ w2
        malliavin = phi2 * inner
    else:
        malliavin = np.zeros(sample.M)
    if cfg.zeta != 0.0:
        drift = cfg.zeta * phi1 * (np.asarray(vol.psi_sq(2, sample.V)) @ w2)
    else:
        drift = np.zeros(sample.M)
    return {"quadratic": quadratic, "malliavin": malliavin, "drift": drift}


def d2omega_u_hat(sample: ConditionalSample, direction: Direction) -> Estimate:
    terms = d2omega_terms(sample, direction)
    return estimate(terms["quadratic"] + terms["malliavin"] + terms["drift"])


def d2omega_u_singular_hat(sample: ConditionalSample) -> Estimate:
    return d2omega_u_hat(sample, Direction.singular_kernel())


def _continuous(direction: Direction, n: int) -> np.ndarray:
    if direction.singular:
        raise DomainError("curve bumps need a continuous direction")
    return direction._node_values(n)


def bump_dx_hat(sample: ConditionalSample, eps: float = DEFAULT_BUMP) -> Estimate:
    up = _phi(sample, 0, sample.terminal(x=sample.x + eps))
    down = _phi(sample, 0, sample.terminal(x=sample.x - eps))
    return estimate((up - down) / (2.0 * eps))


def bump_domega_hat(sample: ConditionalSample, direction: Direction, eps: float = DEFAULT_BUMP) -> Estimate:
    eta = _continuous(direction, sample.n)
    base = sample.curve.values
    up = _phi(sample, 0, sample.terminal(curve_values=base + eps * eta))
    down = _phi(sample, 0, sample.terminal(curve_values=base - eps * eta))
    return estimate((up - down) / (2.0 * eps))


def bump_domega_dx_hat(sample: ConditionalSample, direction: Direction, eps: float = DEFAULT_BUMP) -> Estimate:
    eta = _continuous(direction, sample.n)
    base = sample.curve.values
    up = _phi(sample, 1, sample.terminal(curve_values=base + eps * eta))
    down = _phi(sample, 1, sample.terminal(curve_values=base - eps * eta))
    return estimate((up - down) / (2.0 * eps))


def bump_d2omega_hat(sample: ConditionalSample, direction: Direction, eps: float = DEFAULT_BUMP) -> Estimate:
    eta = _continuous(direction, sample.n)
    base = sample.curve.values
    up = _phi(sample, 0, sample.terminal(curve_values=base + eps * eta))
    mid = _phi(sample, 0)
    down = _phi(sample, 0, sample.terminal(curve_values=base - eps * eta))
    return estimate((up - 2.0 * mid + down) / (eps * eps))


def closed_form_black_scholes_u(t: float, x: float, sigma: float, T: float) -> float:
    """E[(x + sigma B_tau - sigma^2 tau / 2)^2] with tau = T - t."""
    tau = T - t
    return (x - 0.5 * sigma * sigma * tau) ** 2 + sigma * sigma * tau


@dataclass
class ResidualReport:
    residual: Estimate
    value: Estimate
    components: dict[str, Estimate] = field(default_factory=dict)

    def to_dict(self) -> dict[str, object]:
        return {
            "value": self.residual.mean,
            "ci": self.residual.ci,
            "u": self.value.to_dict(),
            "components": {k: v.to_dict() for k, v in self.components.items()},
        }


def ppde_residual(
    t: float,
    x: float,
    curve: ForwardCurve,
    config: ModelConfig,
    M: int,
    seed: int = 0,
    threads: int = 1,
) -> ResidualReport:
    """Signed PPDE residual at (t, x, omega) with a one-step forward difference in time."""
    if curve.n < 2:
        raise DomainError(f"residual needs t + ds < T, curve has {curve.n} step(s)")
    sample = simulate_conditional(t, x, curve, config, M, seed, threads=threads)
    cfg = sample.config
    ds = sample.ds
    phi0 = _phi(sample, 0)
    phi1 = _phi(sample, 1)
    phi2 = _phi(sample, 2)
    # u(t + ds, x, omega restricted) on the same noise: first n - 1 increments against omega(s_{j+1})
    later = _phi(sample, 0, sample.terminal(steps=sample.n - 1, shift=1))
    psi0 = float(cfg.vol.psi(0, curve.current))
    singular = Direction.singular_kernel()
    A = direction_weight(sample, singular)
    second = d2omega_terms(sample, singular)

    pieces = {
        "dt": (later - phi0) / ds,
        "drift": cfg.zeta * psi0 * psi0 * phi1,
        "dxx": 0.5 * psi0 * psi0 * phi2,
        "domega2": 0.5 * (second["quadratic"] + second["malliavin"] + second["drift"]),
        "domega_dx": cfg.rho * psi0 * phi2 * A,
    }
    total = sum(pieces.values())
    return ResidualReport(
        residual=estimate(total),
        value=estimate(phi0),
        components={name: estimate(values) for name, values in pieces.items()},
    )


@dataclass
class TelescopicReport:
    N: int
    sub_steps: int
    M_outer: int
    M_inner: int
    lhs: Estimate
    rhs: Estimate
    difference: Estimate
    cell_rhs: list[float]
    status: CheckStatus
    elapsed_seconds: float
    message: str = ""

    @property
    def consistent(self) -> bool:
        return abs(self.difference.mean) <= 3.0 * self.difference.ci

    def to_dict(self) -> dict[str, object]:
        return {
            "N": self.N,
            "sub_steps": self.sub_steps,
            "M_outer": self.M_outer,
            "M_inner": self.M_inner,
            "lhs": self.lhs.to_dict(),
            "rhs": self.rhs.to_dict(),
            "difference": self.difference.to_dict(),
            "cell_rhs": self.cell_rhs,
            "status": self.status,
            "consistent": self.consistent,
            "message": self.message,
        }


def interpolated_euler(V_left_fine: np.ndarray, dB: np.ndarray, dt: float, ratio: int, config: ModelConfig) -> np.ndarray:
    """Coarse Euler path on the fine nodes: psi frozen at the coarse left endpoint of each cell."""
    frozen = np.repeat(V_left_fine[:, ::ratio], ratio, axis=1)
    steps = euler_increments(frozen, dB, dt, config)
    out = np.empty((V_left_fine.shape[0], V_left_fine.shape[1] + 1))
    out[:, 0] = config.x0
    np.cumsum(steps, axis=1, out=out[:, 1:])
    out[:, 1:] += config.x0
    return out


def _inner_derivatives(
    tau: float,
    x: float,
    theta: np.ndarray,
    config: ModelConfig,
    M_inner: int,
    rng: np.random.Generator,
) -> tuple[float, float, float]:
    curve = ForwardCurve(t=tau, T=config.T, values=theta)
    inner = simulate_conditional(tau, x, curve, config, M_inner, rng=rng, min_steps=1)
    phi2 = _phi(inner, 2)
    dx = float(_phi(inner, 1).mean())
    dxx = float(phi2.mean())
    dxo = float((phi2 * direction_weight(inner, Direction.singular_kernel())).mean())
    return dx, dxx, dxo


def telescopic_check(
    config: ModelConfig,
    N: int,
    M_outer: int,
    M_inner: int,
    seed: int = 0,
    sub_steps: int = TELESCOPE_SUBSTEPS,
    budget_seconds: float = TELESCOPE_BUDGET_SECONDS,
    threads: int = 1,
) -> TelescopicReport:
    """Weak error of the N-step scheme against the sum of its local contributions.

    lhs: E phi(X^fine_T) - E phi(X^N_T) on coupled paths.
    rhs: sum over the fine lattice of h E[ (psi^2(V_t) - psi^2(V_{t_i})) (zeta d_x u + 1/2 d_xx u)
         + rho (psi(V_t) - psi(V_{t_i})) <d_omega d_x u, K^t> ] at (Xbar_t, Theta^t),
         with the derivatives estimated by nested simulation.
    """
    if not 2 <= N <= 4:
        raise DomainError(f"nested telescopic check supports N in 2..4: N={N}")
    if M_outer < 2 or M_inner < 1 or sub_steps < 1:
        raise DomainError(f"need M_outer >= 2, M_inner >= 1, sub_steps >= 1: {M_outer}, {M_inner}, {sub_steps}")
    started = time.perf_counter()
    deadline = started + budget_seconds
    cfg = config
    vol, payoff = cfg.vol, cfg.payoff
    N_f = N * sub_steps
    fine = UniformGrid(cfg.T, N_f)
    coupling = refine_bundle_consistency(UniformGrid(cfg.T, N), fine)
    h = fine.dt
    spec = get_joint_covariance(cfg.H, fine)

    diffs = np.full(M_outer, np.nan)
    sums = np.full(M_outer, np.nan)
    cells = np.zeros((M_outer, N))
    truncated = False

    for start in range(0, M_outer, TELESCOPE_BLOCK):
        if time.perf_counter() > deadline:
            truncated = True
            break
        count = min(TELESCOPE_BLOCK, M_outer - start)
        bundle = sample_bundle(spec, cfg.rho, count, seed, path_offset=start, threads=threads)
        x_fine = euler_terminal(bundle, cfg)
        x_coarse = euler_terminal(coarsen_bundle(bundle, coupling), cfg)
        V_left = left_endpoint_values(bundle.V)
        xbar = interpolated_euler(V_left, bundle.dB, h, sub_steps, cfg)

        def outer(row: int) -> tuple[int, np.ndarray] | None:
            if time.perf_counter() > deadline:
                return None
            p = start + row
            per_cell = np.zeros(N)
            for k in range(1, N_f):
                if k % sub_steps == 0:
                    continue
                i = k // sub_steps
                v_now = V_left[row, k]
                v_cell = V_left[row, i * sub_steps]
                theta = conditional_theta(cfg.H, h, bundle.dW[row, :k], v_now, N_f - k)[0]
                rng = np.random.Generator(
                    np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(TELESCOPE_INNER_STREAM, p, k)))
                )
                dx, dxx, dxo = _inner_derivatives(k * h, float(xbar[row, k]), theta, cfg, M_inner, rng)
                gap_sq = float(vol.psi_sq(0, v_now)) - float(vol.psi_sq(0, v_cell))
                gap = float(vol.psi(0, v_now)) - float(vol.psi(0, v_cell))
                per_cell[i] += h * (cfg.zeta * gap_sq * dx + 0.5 * gap_sq * dxx + cfg.rho * gap * dxo)
            return row, per_cell

        workers = max(1, min(threads, count))
        if workers == 1:
            results = [outer(r) for r in range(count)]
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(outer, range(count)))
        for item in results:
            if item is None:
                truncated = True
                continue
            row, per_cell = item
            p = start + row
            cells[p] = per_cell
            sums[p] = per_cell.sum()
            diffs[p] = float(payoff.phi(0, x_fine[row])) - float(payoff.phi(0, x_coarse[row]))

    done = ~np.isnan(sums)
    used = int(done.sum())
    elapsed = time.perf_counter() - started
    if used < 2:
        nan = Estimate(math.nan, math.nan)
        return TelescopicReport(
            N=N, sub_steps=sub_steps, M_outer=used, M_inner=M_inner, lhs=nan, rhs=nan, difference=nan,
            cell_rhs=[math.nan] * N, status="inconclusive", elapsed_seconds=elapsed,
            message=f"budget of {budget_seconds:.0f}s exhausted before two outer paths finished",
        )
    status: CheckStatus = "inconclusive" if truncated else "ok"
    message = f"budget of {budget_seconds:.0f}s exhausted after {used} outer paths" if truncated else ""
    return TelescopicReport(
        N=N,
        sub_steps=sub_steps,
        M_outer=used,
        M_inner=M_inner,
        lhs=estimate(diffs[done]),
        rhs=estimate(sums[done]),
        difference=estimate(diffs[done] - sums[done]),
        cell_rhs=[float(v) for v in cells[done].mean(axis=0)],
        status=status,
        elapsed_seconds=elapsed,
        message=message,
    )


@dataclass
class TowerReport:
    direct: Estimate
    tower: Estimate
    difference: Estimate

    def to_dict(self) -> dict[str, object]:
        return {
            "direct": self.direct.to_dict(),
            "tower": self.tower.to_dict(),
            "difference": self.difference.to_dict(),
        }


def tower_check(
    t: float,
    t_next: float,
    x: float,
    curve: ForwardCurve,
    config: ModelConfig,
    M_outer: int,
    M_inner: int,
    seed: int = 0,
    M_direct: int = 100_000,
    threads: int = 1,
) -> TowerReport:
    """u(t, x, omega) against E[u(t', X_t', Theta^t')] with the outer state simulated from (t, x, omega)."""
    ds = curve.ds
    k = int(round((t_next - t) / ds)) if ds > 0.0 else 0
    if not 1 <= k < curve.n or not math.isclose(t + k * ds, t_next, rel_tol=1e-9, abs_tol=1e-12):
        raise DomainError(f"t'={t_next} must be an interior node of the curve sub-grid")
    direct = u_hat(simulate_conditional(t, x, curve, config, M_direct, seed, threads=threads, min_steps=1))
    outer = simulate_conditional(t, x, curve, config, M_outer, seed + 1, threads=threads, min_steps=1)
    x_next = outer.terminal(steps=k)
    tail = curve.values[k:]
    tau = float(curve.nodes[k])
    values = np.empty(M_outer)
    for p in range(M_outer):
        theta = conditional_theta(config.H, ds, outer.dW[p, :k], outer.I[p, k], curve.n - k)[0] + tail
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(TOWER_INNER_STREAM, p))))
        inner_curve = ForwardCurve(t=tau, T=curve.T, values=theta)
        inner = simulate_conditional(tau, float(x_next[p]), inner_curve, config, M_inner, rng=rng, min_steps=1)
        values[p] = float(_phi(inner, 0).mean())
    tower = estimate(values)
    diff = Estimate(tower.mean - direct.mean, combined_ci(tower, direct))
    return TowerReport(direct=direct, tower=tower, difference=diff)
