from __future__ import annotations

import math
from typing import Annotated, Literal, Union

import numpy as np
from numpy.polynomial import Polynomial
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import expit

from .errors import DomainError

ArrayLike = float | np.ndarray

FD_STEP = 1e-5


def _as_array(v: ArrayLike) -> np.ndarray:
    return np.asarray(v, dtype=float)


def _out(values: np.ndarray) -> ArrayLike:
    return float(values) if values.ndim == 0 else values


def _check_order(order: int, lo: int, hi: int, what: str) -> None:
    if int(order) != order or not lo <= order <= hi:
        raise DomainError(f"{what} derivative order must be in {lo}..{hi}: order={order}")


class _Frozen(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class ExponentialVol(_Frozen):
    """psi(v) = scale * exp(nu v)."""

    family: Literal["exponential"] = "exponential"
    nu: float = 0.5
    scale: float = Field(default=1.0, gt=0.0)

    @property
    def kappa(self) -> float:
        return abs(self.nu)

    def psi(self, order: int, v: ArrayLike) -> ArrayLike:
        x = _as_array(v)
        return _out(self.scale * self.nu**order * np.exp(self.nu * x))

    def psi_sq(self, order: int, v: ArrayLike) -> ArrayLike:
        x = _as_array(v)
        return _out(self.scale**2 * (2.0 * self.nu) ** order * np.exp(2.0 * self.nu * x))


class PolynomialVol(_Frozen):
    """psi(v) = sum_k coefficients[k] v^k."""

    family: Literal["polynomial"] = "polynomial"
    coefficients: list[float] = Field(min_length=1)

    @property
    def kappa(self) -> float:
        # any positive rate dominates polynomial growth
        return 1.0

    @property
    def poly(self) -> Polynomial:
        return Polynomial(self.coefficients)

    def psi(self, order: int, v: ArrayLike) -> ArrayLike:
        p = self.poly.deriv(order) if order else self.poly
        return _out(p(_as_array(v)))

    def psi_sq(self, order: int, v: ArrayLike) -> ArrayLike:
        sq = self.poly**2
        p = sq.deriv(order) if order else sq
        return _out(p(_as_array(v)))


class ShiftedLinearVol(_Frozen):
    """psi(v) = a + b v."""

    family: Literal["shifted_linear"] = "shifted_linear"
    a: float = 0.0
    b: float = 1.0

    @property
    def kappa(self) -> float:
        return 1.0

    def psi(self, order: int, v: ArrayLike) -> ArrayLike:
        x = _as_array(v)
        if order == 0:
            return _out(self.a + self.b * x)
        if order == 1:
            return _out(np.full_like(x, self.b))
        return _out(np.zeros_like(x))

    def psi_sq(self, order: int, v: ArrayLike) -> ArrayLike:
        x = _as_array(v)
        if order == 0:
            return _out((self.a + self.b * x) ** 2)
        if order == 1:
            return _out(2.0 * self.b * (self.a + self.b * x))
        return _out(np.full_like(x, 2.0 * self.b * self.b))


VolSpec = Annotated[Union[ExponentialVol, PolynomialVol, ShiftedLinearVol], Field(discriminator="family")]


class QuadraticPayoff(_Frozen):
    """phi(x) = a x^2 + b x + c."""

    family: Literal["quadratic"] = "quadratic"
    a: float = 1.0
    b: float = 0.0
    c: float = 0.0

    @property
    def kappa(self) -> float:
        return 2.0

    @property
    def quadratic_coefficient(self) -> float:
        return self.a

    def phi(self, order: int, x: ArrayLike) -> ArrayLike:
        y = _as_array(x)
        if order == 0:
            return _out((self.a * y + self.b) * y + self.c)
        if order == 1:
            return _out(2.0 * self.a * y + self.b)
        if order == 2:
            return _out(np.full_like(y, 2.0 * self.a))
        return _out(np.zeros_like(y))


class MonomialPayoff(_Frozen):
    """phi(x) = x^n."""

    family: Literal["monomial"] = "monomial"
    n: int = Field(default=3, ge=0)

    @property
    def kappa(self) -> float:
        return float(self.n)

    @property
    def quadratic_coefficient(self) -> float | None:
        return 1.0 if self.n == 2 else None

    def phi(self, order: int, x: ArrayLike) -> ArrayLike:
        y = _as_array(x)
        if order > self.n:
            return _out(np.zeros_like(y))
        factor = math.perm(self.n, order)
        return _out(factor * np.power(y, self.n - order))


class SmoothCallPayoff(_Frozen):
    """phi(x) = smoothing * log(1 + exp((x - strike) / smoothing))."""

    family: Literal["smooth_call"] = "smooth_call"
    strike: float = 1.0
    smoothing: float = Field(default=0.05, gt=0.0)

    @property
    def kappa(self) -> float:
        return 1.0

    @property
    def quadratic_coefficient(self) -> None:
        return None

    def phi(self, order: int, x: ArrayLike) -> ArrayLike:
        lam = self.smoothing
        y = (_as_array(x) - self.strike) / lam
        if order == 0:
            return _out(lam * np.logaddexp(0.0, y))
        s = expit(y)
        if order == 1:
            return _out(s)
        if order == 2:
            return _out(s * (1.0 - s) / lam)
        return _out(s * (1.0 - s) * (1.0 - 2.0 * s) / lam**2)


PayoffSpec = Annotated[
    Union[QuadraticPayoff, MonomialPayoff, SmoothCallPayoff],
    Field(discriminator="family"),
]


class ModelConfig(_Frozen):
    x0: float = 0.0
    zeta: float = 0.0
    rho: float = Field(default=0.0, ge=-1.0, le=1.0)
    H: float = Field(default=0.3, gt=0.0, le=0.5)
    T: float = Field(default=1.0, gt=0.0)
    vol: VolSpec = Field(default_factory=ExponentialVol)
    payoff: PayoffSpec = Field(default_factory=QuadraticPayoff)

    @property
    def rho_bar(self) -> float:
        return math.sqrt(max(0.0, 1.0 - self.rho * self.rho))


def psi_eval(vol: VolSpec, order: int, v: ArrayLike) -> ArrayLike:
    _check_order(order, 0, 2, "psi")
    return vol.psi(order, v)


def psi_sq_deriv(vol: VolSpec, order: int, v: ArrayLike) -> ArrayLike:
    _check_order(order, 0, 2, "psi^2")
    return vol.psi_sq(order, v)


def phi_eval(payoff: PayoffSpec, order: int, x: ArrayLike) -> ArrayLike:
    _check_order(order, 0, 3, "phi")
    return payoff.phi(order, x)


def is_constant_vol(vol: VolSpec) -> bool:
    if isinstance(vol, ExponentialVol):
        return vol.nu == 0.0
    if isinstance(vol, ShiftedLinearVol):
        return vol.b == 0.0
    return all(c == 0.0 for c in vol.coefficients[1:])


def vol_growth_constant(vol: VolSpec, lattice: np.ndarray) -> float:
    """Smallest C with |psi^(k)(v)| <= C (1 + exp(kappa |v|)) on the lattice, k = 0..2."""
    v = _as_array(lattice)
    envelope = 1.0 + np.exp(vol.kappa * np.abs(v))
    return max(float(np.max(np.abs(_as_array(vol.psi(k, v))) / envelope)) for k in range(3))


def payoff_growth_constant(payoff: PayoffSpec, lattice: np.ndarray) -> float:
    """Smallest C with |phi^(k)(x)| <= C (1 + |x|^kappa) on the lattice, k = 0..3."""
    x = _as_array(lattice)
    envelope = 1.0 + np.abs(x) ** payoff.kappa
    return max(float(np.max(np.abs(_as_array(payoff.phi(k, x))) / envelope)) for k in range(4))


def central_difference(f, x: ArrayLike, step: float = FD_STEP) -> ArrayLike:
    y = _as_array(x)
    return _out((_as_array(f(y + step)) - _as_array(f(y - step))) / (2.0 * step))
