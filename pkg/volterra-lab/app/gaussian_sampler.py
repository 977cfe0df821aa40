"""Exact joint sampling of (V at grid nodes, W increments) by Cholesky factorization.

Block order is fixed: V_{t_1..t_N} first, then dW_0..dW_{N-1}. V_{t_0} = 0 is
implicit. Random numbers come from PCG64 with one SeedSequence stream per
path (spawn_key = global path index), so any path can be regenerated alone.
"""

from __future__ import annotations

import json
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from pathlib import Path
from threading import Lock

import numpy as np
from scipy import linalg

from .errors import DomainError, FactorizationError
from .kernel import KernelSpec, cell_mean_weights, cov_vv_grid
from .storage import factor_cache_enabled, factors_dir, write_csv

FACTOR_MAGIC = b"VLTC"
FACTOR_VERSION = 1
FACTOR_HEADER = struct.Struct("<4sBHx")

JITTER_START = 1e-14
JITTER_MAX = 1e-8
CHUNK_PATHS = 256
RNG_ALGORITHM = "PCG64/SeedSequence(seed, spawn_key=(path,))"


@dataclass(frozen=True)
class UniformGrid:
    T: float
    N: int

    def __post_init__(self) -> None:
        if not math.isfinite(self.T) or self.T <= 0.0:
            raise DomainError(f"grid horizon must be positive: T={self.T}")
        if int(self.N) != self.N or self.N < 1:
            raise DomainError(f"grid needs N >= 1 steps: N={self.N}")

    @property
    def dt(self) -> float:
        return self.T / self.N

    @cached_property
    def nodes(self) -> np.ndarray:
        out = np.arange(self.N + 1, dtype=float) * self.dt
        out[-1] = self.T
        out.setflags(write=False)
        return out


@dataclass(frozen=True, eq=False)
class JointGaussianSpec:
    grid: UniformGrid
    H: float
    cov: np.ndarray
    chol: np.ndarray
    jitter_used: float

    @property
    def N(self) -> int:
        return self.grid.N


@dataclass(frozen=True, eq=False)
class NoiseBundle:
    grid: UniformGrid
    H: float
    V: np.ndarray
    dW: np.ndarray
    dWbar: np.ndarray
    dB: np.ndarray
    rho: float
    seed: int
    path_offset: int = 0

    @property
    def M(self) -> int:
        return int(self.V.shape[0])


@dataclass(frozen=True)
class GridCoupling:
    coarse: UniformGrid
    fine: UniformGrid
    ratio: int

    @property
    def is_identity(self) -> bool:
        return self.ratio == 1

    def coarse_values(self, fine_values: np.ndarray) -> np.ndarray:
        """Fine node values (columns t_1..t_Nf) at the shared coarse nodes."""
        if self.is_identity:
            return fine_values
        return fine_values[:, self.ratio - 1 :: self.ratio]

    def coarse_increments(self, fine_increments: np.ndarray) -> np.ndarray:
        if self.is_identity:
            return fine_increments
        rows = fine_increments.shape[0]
        return fine_increments.reshape(rows, self.coarse.N, self.ratio).sum(axis=2)


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def _condition_estimate(matrix: np.ndarray) -> float:
    try:
        return float(np.linalg.cond(matrix))
    except np.linalg.LinAlgError:
        return math.inf


def jittered_cholesky(cov: np.ndarray) -> tuple[np.ndarray, float]:
    scale = float(np.mean(np.diag(cov)))
    attempts = [0.0]
    jitter = JITTER_START * scale
    while jitter <= JITTER_MAX * scale * (1.0 + 1e-9):
        attempts.append(jitter)
        jitter *= 10.0
    work = np.array(cov, dtype=float, copy=True)
    diag = np.diag_indices_from(work)
    base = work[diag].copy()
    for jitter in attempts:
        work[diag] = base + jitter
        try:
            factor = linalg.cholesky(work, lower=True, check_finite=False)
        except linalg.LinAlgError:
            continue
        if np.all(np.isfinite(factor)):
            return factor, jitter
    raise FactorizationError(
        f"Cholesky failed after jitter {attempts[-1]:.1e} "
        f"(cond~{_condition_estimate(cov):.1e}, n={cov.shape[0]})",
        size=cov.shape[0],
        jitter_tried=attempts[-1],
        condition_estimate=_condition_estimate(cov),
    )


def joint_covariance_matrix(H: float, grid: UniformGrid) -> np.ndarray:
    spec = KernelSpec(H)
    n = grid.N
    dt = grid.dt
    cov = np.zeros((2 * n, 2 * n), dtype=float)
    cov[:n, :n] = cov_vv_grid(spec, n, dt)
    # Cov(V_{t_i}, dW_j) = int_{t_j}^{t_{j+1}} K(t_i, r) dr depends on i - j only
    lag = np.arange(1, n + 1)[:, None] - np.arange(n)[None, :]
    weights = np.concatenate([[0.0], cell_mean_weights(spec, n, dt) * dt])
    cov[:n, n:] = weights[np.clip(lag, 0, n)]
    cov[n:, :n] = cov[:n, n:].T
    cov[n:, n:] = np.eye(n) * dt
    return cov


def build_joint_covariance(H: float, grid: UniformGrid) -> JointGaussianSpec:
    cov = joint_covariance_matrix(H, grid)
    chol, jitter = jittered_cholesky(cov)
    return JointGaussianSpec(grid=grid, H=float(H), cov=_readonly(cov), chol=_readonly(chol), jitter_used=jitter)


_build_locks: dict[tuple[float, float, int], Lock] = {}
_build_locks_guard = Lock()


@lru_cache(maxsize=64)
def _cached_joint(H: float, T: float, N: int) -> JointGaussianSpec:
    return build_joint_covariance(H, UniformGrid(T, N))


def get_joint_covariance(H: float, grid: UniformGrid) -> JointGaussianSpec:
    """In-process memoized build_joint_covariance; concurrent callers of one grid share a single build."""
    key = (float(H), float(grid.T), int(grid.N))
    with _build_locks_guard:
        lock = _build_locks.setdefault(key, Lock())
    with lock:
        return _cached_joint(*key)


def factor_key(H: float, grid: UniformGrid) -> str:
    return f"joint-H{float(H)!r}-T{float(grid.T)!r}-N{grid.N}"


def save_factor(spec: JointGaussianSpec, path: Path) -> Path:
    n = spec.N
    if n > 0xFFFF:
        raise DomainError(f"factor files hold at most 65535 steps: N={n}")
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("wb") as fp:
        fp.write(FACTOR_HEADER.pack(FACTOR_MAGIC, FACTOR_VERSION, n))
        fp.write(np.ascontiguousarray(spec.cov, dtype="<f8").tobytes(order="C"))
        fp.write(np.ascontiguousarray(spec.chol, dtype="<f8").tobytes(order="C"))
    tmp.replace(path)
    meta = {"H": spec.H, "T": spec.grid.T, "N": n, "jitter_used": spec.jitter_used, "block_order": "V,dW"}
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_factor(path: Path, H: float, T: float) -> JointGaussianSpec:
    raw = path.read_bytes()
    if len(raw) < FACTOR_HEADER.size:
        raise DomainError(f"factor file too short: {path}")
    magic, version, n = FACTOR_HEADER.unpack_from(raw, 0)
    if magic != FACTOR_MAGIC or version != FACTOR_VERSION:
        raise DomainError(f"not a factor file (magic={magic!r}, version={version}): {path}")
    size = 2 * n
    expected = FACTOR_HEADER.size + 2 * size * size * 8
    if len(raw) != expected:
        raise DomainError(f"factor file has {len(raw)} bytes, expected {expected}: {path}")
    body = np.frombuffer(raw, dtype="<f8", offset=FACTOR_HEADER.size).astype(float)
    cov = body[: size * size].reshape(size, size)
    chol = body[size * size :].reshape(size, size)
    jitter = 0.0
    meta_path = path.with_suffix(".json")
    if meta_path.exists():
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        if not math.isclose(float(meta.get("H", H)), H) or not math.isclose(float(meta.get("T", T)), T):
            raise DomainError(f"factor file {path} was built for H={meta.get('H')}, T={meta.get('T')}")
        jitter = float(meta.get("jitter_used", 0.0))
    return JointGaussianSpec(
        grid=UniformGrid(T, n), H=float(H), cov=_readonly(cov), chol=_readonly(chol), jitter_used=jitter
    )


def load_or_build_joint_covariance(H: float, grid: UniformGrid, cache_dir: Path | None = None) -> JointGaussianSpec:
    if cache_dir is None and not factor_cache_enabled():
        return get_joint_covariance(H, grid)
    folder = cache_dir or factors_dir()
    path = folder / f"{factor_key(H, grid)}.vltc"
    if path.exists():
        return load_factor(path, H, grid.T)
    spec = get_joint_covariance(H, grid)
    save_factor(spec, path)
    return spec


def path_generator(seed: int, path_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(int(path_index),))))


def _draw_chunk(spec: JointGaussianSpec, seed: int, first_path: int, count: int) -> tuple[np.ndarray, np.ndarray]:
    n = spec.N
    z = np.empty((count, 2 * n), dtype=float)
    zbar = np.empty((count, n), dtype=float)
    for row in range(count):
        gen = path_generator(seed, first_path + row)
        draws = gen.standard_normal(3 * n)
        z[row] = draws[: 2 * n]
        zbar[row] = draws[2 * n :]
    return z @ spec.chol.T, zbar


def _assemble(
    spec: JointGaussianSpec,
    joint: np.ndarray,
    zbar: np.ndarray,
    rho: float,
    seed: int,
    path_offset: int,
) -> NoiseBundle:
    n = spec.N
    dt = spec.grid.dt
    V = np.ascontiguousarray(joint[:, :n])
    dW = np.ascontiguousarray(joint[:, n:])
    dWbar = zbar * math.sqrt(dt)
    dB = rho * dW + math.sqrt(max(0.0, 1.0 - rho * rho)) * dWbar
    return NoiseBundle(
        grid=spec.grid,
        H=spec.H,
        V=_readonly(V),
        dW=_readonly(dW),
        dWbar=_readonly(dWbar),
        dB=_readonly(dB),
        rho=float(rho),
        seed=int(seed),
        path_offset=int(path_offset),
    )


def _check_rho(rho: float) -> None:
    if not math.isfinite(rho) or abs(rho) > 1.0:
        raise DomainError(f"correlation must satisfy |rho| <= 1: rho={rho}")


def sample_bundle(
    spec: JointGaussianSpec,
    rho: float,
    M: int,
    seed: int,
    path_offset: int = 0,
    threads: int = 1,
) -> NoiseBundle:
    """Exact joint draw of M paths [path_offset, path_offset + M)."""
    if M < 1:
        raise DomainError(f"path count must be positive: M={M}")
    _check_rho(rho)
    n = spec.N
    joint = np.empty((M, 2 * n), dtype=float)
    zbar = np.empty((M, n), dtype=float)
    starts = list(range(0, M, CHUNK_PATHS))

    def work(start: int) -> None:
        count = min(CHUNK_PATHS, M - start)
        j, zb = _draw_chunk(spec, seed, path_offset + start, count)
        joint[start : start + count] = j
        zbar[start : start + count] = zb

    workers = max(1, min(int(threads or 1), len(starts)))
    if workers == 1:
        for start in starts:
            work(start)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(work, starts))
    return _assemble(spec, joint, zbar, rho, seed, path_offset)


def sample_bundle_from(spec: JointGaussianSpec, rho: float, M: int, rng: np.random.Generator) -> NoiseBundle:
    """Block draw from one generator, for nested inner loops."""
    if M < 1:
        raise DomainError(f"path count must be positive: M={M}")
    _check_rho(rho)
    n = spec.N
    z = rng.standard_normal((M, 2 * n))
    zbar = rng.standard_normal((M, n))
    return _assemble(spec, z @ spec.chol.T, zbar, rho, seed=-1, path_offset=0)


def refine_bundle_consistency(coarse: UniformGrid, fine: UniformGrid) -> GridCoupling:
    if not math.isclose(coarse.T, fine.T, rel_tol=0.0, abs_tol=1e-15 * max(1.0, fine.T)):
        raise DomainError(f"grids cover different horizons: {coarse.T} vs {fine.T}")
    if fine.N < coarse.N or fine.N % coarse.N != 0:
        raise DomainError(f"fine N={fine.N} is not a multiple of coarse N={coarse.N}")
    return GridCoupling(coarse=coarse, fine=fine, ratio=fine.N // coarse.N)


def coarsen_bundle(bundle: NoiseBundle, coupling: GridCoupling) -> NoiseBundle:
    if bundle.grid.N != coupling.fine.N:
        raise DomainError(f"bundle has {bundle.grid.N} steps, coupling expects {coupling.fine.N}")
    if coupling.is_identity:
        return bundle
    return NoiseBundle(
        grid=coupling.coarse,
        H=bundle.H,
        V=_readonly(np.ascontiguousarray(coupling.coarse_values(bundle.V))),
        dW=_readonly(coupling.coarse_increments(bundle.dW)),
        dWbar=_readonly(coupling.coarse_increments(bundle.dWbar)),
        dB=_readonly(coupling.coarse_increments(bundle.dB)),
        rho=bundle.rho,
        seed=bundle.seed,
        path_offset=bundle.path_offset,
    )


def conditional_theta(H: float, dt: float, dW_past: np.ndarray, V_now: np.ndarray, steps_ahead: int) -> np.ndarray:
    """Forward curve E[V_s | increments before now] on the nodes now, now+dt, ...

    Column 0 is the sampled V_now; column j >= 1 uses cell-mean kernel weights
    against the k past increments: sum_l (1/dt) int_{cell l} K(now + j dt, r) dr dW_l.
    """
    spec = KernelSpec(H)
    dW_past = np.atleast_2d(dW_past)
    paths, k = dW_past.shape
    out = np.empty((paths, steps_ahead + 1), dtype=float)
    out[:, 0] = V_now
    if steps_ahead == 0:
        return out
    if k == 0:
        out[:, 1:] = 0.0
        return out
    weights = cell_mean_weights(spec, k + steps_ahead, dt)
    # lag from past cell l to node k + j is k + j - l
    lags = (np.arange(1, steps_ahead + 1)[:, None] + k - np.arange(k)[None, :]) - 1
    out[:, 1:] = dW_past @ weights[lags].T
    return out


def export_paths_csv(bundle: NoiseBundle, path: Path) -> Path:
    n = bundle.grid.N
    header = [f"V_{i}" for i in range(1, n + 1)] + [f"dW_{i}" for i in range(n)]
    rows = (list(bundle.V[p]) + list(bundle.dW[p]) for p in range(bundle.M))
    return write_csv(path, header, rows)
