from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import integrate
from scipy.special import beta as beta_fn

from app.errors import DomainError
from app.kernel import (
    KernelSpec,
    adaptive_gauss,
    beta_identity,
    cell_mean_weights,
    cell_sq_weights,
    cov_vv,
    cov_vv_grid,
    delta_k_closed_form,
    delta_k_exponent,
    delta_k_weighted_integral,
    integrate_left_singular,
    k_eval,
    k_primitive,
    kernel_sq_integral,
    weighted_kernel_integral,
)


def test_kernel_spec_rejects_hurst_outside_range() -> None:
    for H in (0.0, -0.1, 0.6, math.nan):
        with pytest.raises(DomainError):
            KernelSpec(H)
    assert KernelSpec(0.5).is_brownian
    assert KernelSpec(0.3).h_plus == pytest.approx(0.8)


def test_k_eval_values_and_support() -> None:
    assert k_eval(KernelSpec(0.5), 1.0, 0.3) == 1.0
    assert k_eval(KernelSpec(0.25), 1.0, 0.75) == pytest.approx(math.sqrt(2.0), rel=1e-12)
    assert k_eval(KernelSpec(0.3), 0.5, 0.5) == 0.0
    assert k_eval(KernelSpec(0.3), 0.5, 0.9) == 0.0
    out = k_eval(KernelSpec(0.25), np.array([1.0, 1.0]), np.array([0.75, 1.5]))
    np.testing.assert_allclose(out, [math.sqrt(2.0), 0.0])


def test_k_eval_rejects_negative_time() -> None:
    with pytest.raises(DomainError):
        k_eval(KernelSpec(0.3), -1.0, 0.0)


def test_k_primitive_closed_form() -> None:
    assert k_primitive(KernelSpec(0.5), 1.0, 0.0, 1.0) == pytest.approx(1.0)
    assert k_primitive(KernelSpec(0.25), 1.0, 0.0, 1.0) == pytest.approx(4.0 / 3.0)
    assert k_primitive(KernelSpec(0.25), 0.5, 0.5, 1.0) == 0.0
    # b beyond t is clipped to t
    assert k_primitive(KernelSpec(0.3), 0.5, 0.0, 2.0) == pytest.approx(0.5**0.8 / 0.8)
    with pytest.raises(DomainError):
        k_primitive(KernelSpec(0.3), 1.0, 0.6, 0.2)


@pytest.mark.parametrize("H", [0.1, 0.3, 0.5])
def test_k_primitive_matches_quadrature_on_a_grid(H: float) -> None:
    spec = KernelSpec(H)
    e = spec.exponent
    t = 1.0
    edges = [0.0, 0.2, 0.45, 0.7, 1.0, 1.3]
    for i, a in enumerate(edges):
        for b in edges[i + 1 :]:
            if a >= t:
                expected = 0.0
            elif b < t:
                expected, _ = integrate.quad(lambda r: (t - r) ** e, a, b, epsabs=1e-14, epsrel=1e-12)
            else:
                # singular endpoint at t handled by the algebraic weight
                expected, _ = integrate.quad(lambda r: 1.0, a, t, weight="alg", wvar=(0.0, e), epsabs=1e-14)
            assert k_primitive(spec, t, a, b) == pytest.approx(expected, rel=1e-9, abs=1e-12)


@pytest.mark.parametrize("H", [0.1, 0.25, 0.4, 0.5])
def test_cov_vv_bounded_by_shorter_variance(H: float) -> None:
    spec = KernelSpec(H)
    times = [0.1, 0.3, 0.7, 1.0]
    for s in times:
        for t in times:
            lo = min(s, t)
            bound = lo ** (2.0 * H) / (2.0 * H)
            value = cov_vv(spec, s, t)
            assert 0.0 < value <= bound * (1.0 + 1e-12)
            if s == t or H == 0.5:
                assert value == pytest.approx(bound, rel=1e-12)


def test_k_eval_is_monotone() -> None:
    s = np.linspace(0.0, 0.99, 50)
    for H in (0.1, 0.3, 0.45):
        spec = KernelSpec(H)
        # lag shrinks as s grows, negative exponent
        assert np.all(np.diff(k_eval(spec, 1.0, s)) > 0.0)
        assert np.all(np.diff(k_eval(spec, 1.0 + s, 0.0)) < 0.0)
    assert np.all(k_eval(KernelSpec(0.5), 1.0, s) == 1.0)


def test_cov_vv_diagonal_and_brownian() -> None:
    assert cov_vv(KernelSpec(0.3), 1.0, 1.0) == pytest.approx(1.0 / 0.6, rel=1e-14)
    assert cov_vv(KernelSpec(0.5), 0.4, 1.0) == pytest.approx(0.4)
    assert cov_vv(KernelSpec(0.2), 0.0, 1.0) == 0.0


def test_cov_vv_matches_scipy_algebraic_weight_quadrature() -> None:
    spec = KernelSpec(0.3)
    e = spec.exponent
    # int_0^0.5 (0.5 - r)^e (1 - r)^e dr with the endpoint singularity handled by QUADPACK
    reference, _ = integrate.quad(lambda r: (1.0 - r) ** e, 0.0, 0.5, weight="alg", wvar=(0.0, e), epsabs=1e-14)
    assert cov_vv(spec, 0.5, 1.0) == pytest.approx(reference, rel=1e-10)
    assert cov_vv(spec, 1.0, 0.5) == pytest.approx(reference, rel=1e-10)


def test_cov_vv_grid_agrees_with_pairwise_quadrature() -> None:
    spec = KernelSpec(0.2)
    n = 12
    dt = 1.0 / n
    grid = cov_vv_grid(spec, n, dt)
    pairwise = np.array([[cov_vv(spec, (i + 1) * dt, (j + 1) * dt) for j in range(n)] for i in range(n)])
    np.testing.assert_allclose(grid, pairwise, rtol=1e-9)
    np.testing.assert_array_equal(grid, grid.T)


def test_cov_vv_grid_brownian_is_min() -> None:
    grid = cov_vv_grid(KernelSpec(0.5), 4, 0.25)
    expected = np.minimum.outer(np.arange(1, 5), np.arange(1, 5)) * 0.25
    np.testing.assert_allclose(grid, expected)


def test_adaptive_gauss_polynomial_and_singular_substitution() -> None:
    assert adaptive_gauss(lambda x: x**3, 0.0, 2.0) == pytest.approx(4.0, rel=1e-14)
    # int_0^1 x^{-0.4} dx = 1 / 0.6
    value = integrate_left_singular(lambda x: np.ones_like(x), 0.0, 1.0, -0.4)
    assert value == pytest.approx(1.0 / 0.6, rel=1e-12)


def test_weighted_kernel_integral_known_values() -> None:
    assert weighted_kernel_integral(KernelSpec(0.5), 1.0, 0.0) == pytest.approx(1.0, rel=1e-12)
    assert weighted_kernel_integral(KernelSpec(0.25), 1.0, 0.0) == pytest.approx(4.0 / 3.0, rel=1e-12)
    spec = KernelSpec(0.1)
    expected = beta_fn(0.6, 2.0) * 2.0**1.6
    assert weighted_kernel_integral(spec, 2.0, 1.0) == pytest.approx(expected, rel=1e-8)
    assert beta_identity(spec, 2.0, 1.0) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("H", [0.05, 0.2, 0.35, 0.5])
@pytest.mark.parametrize("beta", [-0.5, 0.0, 1.5])
def test_weighted_kernel_integral_matches_beta_identity(H: float, beta: float) -> None:
    spec = KernelSpec(H)
    assert weighted_kernel_integral(spec, 0.7, beta) == pytest.approx(beta_identity(spec, 0.7, beta), rel=1e-8)


def test_beta_identity_brownian_rows() -> None:
    spec = KernelSpec(0.5)
    for beta in (0.0, 0.5, 2.0):
        assert beta_identity(spec, 0.8, beta) == pytest.approx(0.8 ** (beta + 1.0) / (beta + 1.0), rel=1e-12)


def test_weighted_kernel_integral_rejects_beta_below_minus_one() -> None:
    with pytest.raises(DomainError):
        weighted_kernel_integral(KernelSpec(0.3), 1.0, -1.0)
    with pytest.raises(DomainError):
        beta_identity(KernelSpec(0.3), 1.0, -2.0)


def test_delta_k_trivial_cases() -> None:
    for H in (0.1, 0.3, 0.5):
        assert delta_k_weighted_integral(KernelSpec(H), 1.0, 1.0, 0.0) == 0.0
    assert delta_k_weighted_integral(KernelSpec(0.5), 1.0, 0.9, 0.0) == pytest.approx(0.1, rel=1e-12)
    with pytest.raises(DomainError):
        delta_k_weighted_integral(KernelSpec(0.3), 1.0, 1.2, 0.0)


@pytest.mark.parametrize("H", [0.1, 0.2, 0.4])
def test_delta_k_matches_closed_form_at_alpha_zero(H: float) -> None:
    spec = KernelSpec(H)
    for k in (2, 5, 8):
        t_i = 1.0 - 2.0**-k
        assert delta_k_weighted_integral(spec, 1.0, t_i, 0.0) == pytest.approx(
            delta_k_closed_form(spec, 1.0, t_i), rel=1e-8
        )


@pytest.mark.parametrize("H", [0.1, 0.2])
def test_delta_k_scaling_exponent(H: float) -> None:
    spec = KernelSpec(H)
    steps = np.array([2.0**-k for k in range(3, 10)])
    values = np.array([delta_k_weighted_integral(spec, 1.0, 1.0 - d, 0.0) for d in steps])
    slope = np.polyfit(np.log(steps), np.log(values), 1)[0]
    assert delta_k_exponent(spec, 0.0) == pytest.approx(spec.h_plus)
    assert slope == pytest.approx(spec.h_plus, abs=0.05)


def test_delta_k_exponent_saturates_at_one() -> None:
    assert delta_k_exponent(KernelSpec(0.3), 0.6) == 1.0
    assert delta_k_exponent(KernelSpec(0.1), 0.2) == pytest.approx(0.8)


def test_cell_weights_integrate_the_kernel() -> None:
    spec = KernelSpec(0.15)
    n, dt = 40, 0.025
    w = cell_mean_weights(spec, n, dt)
    assert float(w.sum() * dt) == pytest.approx((n * dt) ** spec.h_plus / spec.h_plus, rel=1e-12)
    sq = cell_sq_weights(spec, n, dt)
    assert float(sq.sum()) == pytest.approx(kernel_sq_integral(spec, 0.0, n * dt), rel=1e-12)
    # first cell stays finite although K blows up at lag zero
    assert np.all(np.isfinite(w)) and w[0] > w[1] > w[-1]
