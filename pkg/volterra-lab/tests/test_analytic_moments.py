from __future__ import annotations

import math

import numpy as np
import pytest

from app.analytic_moments import (
    exact_weak_error_quadratic,
    expected_psi,
    expected_psi_sq,
    geometric_weak_error,
    quadratic_coefficient,
    trick_rate_one_check,
    v_expmoment,
    v_moment,
    v_variance,
    verify_weak_regularity,
)
from app.errors import DomainError
from app.gaussian_sampler import UniformGrid
from app.model import ExponentialVol, ModelConfig, MonomialPayoff, PolynomialVol, QuadraticPayoff, ShiftedLinearVol


def test_gaussian_moments() -> None:
    assert v_variance(0.3, 1.0) == pytest.approx(1.0 / 0.6)
    assert v_variance(0.3, 0.0) == 0.0
    assert v_moment(0.3, 1.0, 3) == 0.0
    assert v_moment(0.3, 1.0, 0) == 1.0
    assert v_moment(0.2, 0.5, 4) == pytest.approx(3.0 * float(v_variance(0.2, 0.5)) ** 2)
    assert v_moment(0.2, 0.5, 6) == pytest.approx(15.0 * float(v_variance(0.2, 0.5)) ** 3)
    assert v_expmoment(0.3, 1.0, 0.5) == pytest.approx(math.exp(0.25 / 1.2))
    with pytest.raises(DomainError):
        v_variance(0.3, -1.0)
    with pytest.raises(DomainError):
        v_moment(0.3, 1.0, 1.5)


def test_expected_psi_families() -> None:
    t = np.array([0.25, 1.0])
    var = np.asarray(v_variance(0.25, t))
    np.testing.assert_allclose(expected_psi(PolynomialVol(coefficients=[1.0, 3.0, 1.0]), 0.25, t), 1.0 + var)
    np.testing.assert_allclose(
        expected_psi_sq(PolynomialVol(coefficients=[0.0, 1.0]), 0.25, t), var, rtol=1e-14
    )
    np.testing.assert_allclose(expected_psi_sq(ShiftedLinearVol(a=0.5, b=2.0), 0.25, t), 0.25 + 4.0 * var)
    vol = ExponentialVol(nu=0.4, scale=1.5)
    np.testing.assert_allclose(expected_psi_sq(vol, 0.25, t), 2.25 * np.exp(2.0 * 0.16 * var))


def test_quadratic_coefficient_accepts_only_quadratic_payoffs() -> None:
    assert quadratic_coefficient(ModelConfig(payoff=QuadraticPayoff(a=2.5))) == 2.5
    assert quadratic_coefficient(ModelConfig(payoff=MonomialPayoff(n=2))) == 1.0
    with pytest.raises(DomainError):
        quadratic_coefficient(ModelConfig(payoff=MonomialPayoff(n=3)))


@pytest.mark.parametrize("N", [1, 4, 16, 64])
def test_brownian_weak_error_matches_geometric_sum(N: int) -> None:
    nu = 0.5
    cfg = ModelConfig(H=0.5, vol=ExponentialVol(nu=nu), payoff=QuadraticPayoff())
    exact = exact_weak_error_quadratic(cfg, UniformGrid(1.0, N))
    assert exact == pytest.approx(geometric_weak_error(2.0 * nu * nu, 1.0, N), rel=1e-10)


def test_weak_error_vanishes_for_constant_vol() -> None:
    cfg = ModelConfig(H=0.2, vol=ShiftedLinearVol(a=0.7, b=0.0))
    assert exact_weak_error_quadratic(cfg, UniformGrid(1.0, 8)) == 0.0


def test_weak_error_scales_with_quadratic_coefficient_only() -> None:
    grid = UniformGrid(1.0, 32)
    base = exact_weak_error_quadratic(ModelConfig(H=0.3, payoff=QuadraticPayoff()), grid)
    scaled = exact_weak_error_quadratic(ModelConfig(H=0.3, payoff=QuadraticPayoff(a=2.0, b=5.0, c=1.0)), grid)
    mono = exact_weak_error_quadratic(ModelConfig(H=0.3, payoff=MonomialPayoff(n=2)), grid)
    assert base > 0.0
    assert scaled == pytest.approx(2.0 * base, rel=1e-14)
    assert mono == base


def test_weak_error_preconditions() -> None:
    with pytest.raises(DomainError):
        exact_weak_error_quadratic(ModelConfig(zeta=-0.5), UniformGrid(1.0, 8))
    with pytest.raises(DomainError):
        exact_weak_error_quadratic(ModelConfig(payoff=MonomialPayoff(n=3)), UniformGrid(1.0, 8))
    with pytest.raises(DomainError):
        exact_weak_error_quadratic(ModelConfig(T=2.0), UniformGrid(1.0, 8))


def test_case1_rate_is_one() -> None:
    cfg = ModelConfig(H=0.3, vol=ExponentialVol(nu=0.5), payoff=QuadraticPayoff())
    levels = [16, 32, 64, 128, 256]
    errors = [exact_weak_error_quadratic(cfg, UniformGrid(1.0, N)) for N in levels]
    slope = np.polyfit(np.log(levels), np.log(errors), 1)[0]
    assert slope == pytest.approx(-1.0, abs=0.1)


def test_regularity_constant_is_exact_for_linear_vol() -> None:
    H, b = 0.25, 0.5
    report = verify_weak_regularity(ShiftedLinearVol(a=0.3, b=b), H, UniformGrid(1.0, 8))
    assert report.constant("psi") == 0.0
    assert report.constant("psi_sq") == pytest.approx(b * b / (2.0 * H), rel=1e-9)
    payload = report.to_dict()
    assert payload["N"] == 8 and len(payload["entries"]) == 2


def test_regularity_constant_finite_for_exponential_vol() -> None:
    report = verify_weak_regularity(ExponentialVol(nu=0.5), 0.1, UniformGrid(1.0, 16))
    for name in ("psi", "psi_sq"):
        value = report.constant(name)
        assert 0.0 < value < math.inf
    with pytest.raises(KeyError):
        report.constant("phi")


def test_rate_one_trick() -> None:
    lhs, rhs = trick_rate_one_check(1.0, 1.0, 10)
    assert lhs == pytest.approx(0.5 * rhs, rel=1e-12)
    for gamma in (0.2, 0.6, 1.5):
        lhs, rhs = trick_rate_one_check(gamma, 2.0, 25)
        assert 0.0 < lhs <= rhs
    with pytest.raises(DomainError):
        trick_rate_one_check(0.0, 1.0, 10)
