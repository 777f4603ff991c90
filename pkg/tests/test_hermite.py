import math

import numpy as np
import pytest
from scipy.integrate import quad, quad_vec
from scipy.special import ndtr

from src.errors import ParameterError
from src.hermite import (
    HermiteEvaluator,
    TruncatedDensity,
    coeff_h,
    coeff_l,
    coeff_q,
    density_g,
    hermite_H,
    normalized_hermite,
    orthonormality_check,
    payoff_coefficients,
    price_european_series,
    tail_kernels,
)
from src.model_core import GaussianWeight, HermiteMoments, hermite_moments
from src.pricing import black_scholes_price

W = GaussianWeight(mu_w=4.55, sigma_w=0.7)


def numeric_tail(power: int, n: int, K: float) -> float:
    def integrand(y: float) -> float:
        return y ** power * hermite_H(n, y, W) * W.pdf(y)

    lo, hi = max(K, W.mu_w - 14 * W.sigma_w), W.mu_w + 14 * W.sigma_w
    value, _ = quad(integrand, lo, hi, limit=200, epsabs=1e-13, epsrel=1e-12)
    return value


@pytest.mark.parametrize("m", range(6))
@pytest.mark.parametrize("n", range(6))
def test_orthonormal(m, n):
    assert orthonormality_check(m, n, W) == pytest.approx(1.0 if m == n else 0.0, abs=1e-12)


def test_orthonormal_to_order_40():
    worst = max(
        abs(orthonormality_check(m, n, W) - (1.0 if m == n else 0.0)) for m in range(41) for n in range(m, 41)
    )
    assert worst < 1e-10


def test_evaluator_bounds():
    evaluator = HermiteEvaluator(W, 4)
    assert evaluator(0, 3.0) == pytest.approx(1.0)
    with pytest.raises(ParameterError):
        evaluator(5, 3.0)


@pytest.mark.parametrize("n", range(7))
@pytest.mark.parametrize("K", [3.9, 4.55 + 0.3 * 0.7, 5.8])
def test_tail_kernels_match_quadrature(n, K):
    assert coeff_l(n, K, W) == pytest.approx(numeric_tail(0, n, K), abs=1e-10)
    assert coeff_h(n, K, W) == pytest.approx(numeric_tail(1, n, K), abs=1e-9)
    assert coeff_q(n, K, W) == pytest.approx(numeric_tail(2, n, K), abs=1e-8)


def test_l0_is_upper_tail():
    K = 4.9
    assert coeff_l(0, K, W) == pytest.approx(float(ndtr(-(K - W.mu_w) / W.sigma_w)), abs=1e-15)


def test_h_branches_agree_with_vector_kernels():
    edges = np.array([4.0, 4.6, 5.1])
    _, h, _ = tail_kernels(edges, W, 8)
    for n in range(9):
        for e, K in enumerate(edges):
            assert coeff_h(n, K, W) == pytest.approx(h[n, e], abs=1e-12)


def test_infinite_edges():
    l, h, q = tail_kernels(np.array([-np.inf, np.inf]), W, 3)
    np.testing.assert_allclose(l[:, 0], [1.0, 0.0, 0.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(l[:, 1], 0.0)
    assert h[0, 0] == pytest.approx(W.mu_w)
    assert h[1, 0] == pytest.approx(W.sigma_w)
    assert q[0, 0] == pytest.approx(W.mu_w ** 2 + W.sigma_w ** 2)
    assert coeff_h(0, -np.inf, W) == pytest.approx(W.mu_w)
    assert coeff_h(3, np.inf, W) == 0.0


def test_negative_order():
    with pytest.raises(ParameterError):
        coeff_l(-1, 4.0, W)
    with pytest.raises(ParameterError):
        hermite_H(-1, 4.0, W)


class TestTruncatedDensity:
    def test_order_zero_is_the_weight(self, bs_moments, bs_weight):
        d = TruncatedDensity.from_moments(bs_moments)
        x = np.linspace(4.0, 5.2, 7)
        np.testing.assert_allclose(density_g(x, d), bs_weight.pdf(x), rtol=1e-13)
        assert d.cdf(bs_weight.mu_w) == pytest.approx(0.5, abs=1e-14)

    def test_mass_and_mean(self):
        lm = HermiteMoments(order=3, values=np.array([1.0, 0.1, -0.05, 0.02]), weight=W, maturity=1.0)
        d = TruncatedDensity.from_moments(lm)
        mass, first, _ = d.tail_moments(np.array([-np.inf]))
        assert mass[0] == pytest.approx(1.0)
        assert first[0] == pytest.approx(d.mean)
        assert d.mean == pytest.approx(W.mu_w + 0.1 * W.sigma_w)
        assert quad(d.pdf, W.mu_w - 12, W.mu_w + 12, limit=200, epsabs=1e-12)[0] == pytest.approx(1.0, abs=1e-9)


class TestSeriesPricing:
    def test_black_scholes_limit(self, bs_params, bs_moments):
        d = TruncatedDensity.from_moments(bs_moments)
        for K in (80.0, 100.0, 120.0):
            expected = black_scholes_price(100.0, K, 1.0, bs_params.r, 0.0, 0.2, "call")
            assert price_european_series(d, K, 1.0, bs_params.r, "call") == pytest.approx(expected, rel=1e-8)

    def test_put_call_parity(self, bs_params, bs_moments):
        d = TruncatedDensity.from_moments(bs_moments)
        K, r = 105.0, bs_params.r
        call = price_european_series(d, K, 1.0, r, "call")
        put = price_european_series(d, K, 1.0, r, "put")
        assert call - put == pytest.approx(100.0 - K * math.exp(-r), abs=1e-8)

    def test_matches_quadrature_against_the_density(self, table1_params, table1_weight):
        lm = hermite_moments(table1_params, 1.0, table1_weight, 12)
        d = TruncatedDensity.from_moments(lm)
        hi = table1_weight.mu_w + 14 * table1_weight.sigma_w
        lo = table1_weight.mu_w - 14 * table1_weight.sigma_w
        for K in (85.0, 100.0, 115.0):
            call, _ = quad(lambda x: (math.exp(x) - K) * d.pdf(x), math.log(K), hi, limit=400, epsabs=1e-11)
            put, _ = quad(lambda x: (K - math.exp(x)) * d.pdf(x), lo, math.log(K), limit=400, epsabs=1e-11)
            disc = math.exp(-table1_params.r)
            assert price_european_series(d, K, 1.0, table1_params.r, "call") == pytest.approx(disc * call, abs=1e-7)
            assert price_european_series(d, K, 1.0, table1_params.r, "put") == pytest.approx(disc * put, abs=1e-7)

    def test_call_prices_fall_with_strike(self, table1_params, table1_weight):
        lm = hermite_moments(table1_params, 1.0, table1_weight, 20)
        d = TruncatedDensity.from_moments(lm)
        strikes = np.arange(80.0, 121.0, 5.0)
        calls = [price_european_series(d, K, 1.0, table1_params.r, "call") for K in strikes]
        puts = [price_european_series(d, K, 1.0, table1_params.r, "put") for K in strikes]
        assert np.all(np.diff(calls) < 0)
        assert np.all(np.diff(puts) > 0)

    def test_payoff_coefficients_reject_bad_input(self):
        with pytest.raises(ParameterError):
            payoff_coefficients(0.0, W, 3)
        with pytest.raises(ParameterError):
            payoff_coefficients(100.0, W, 3, kind="straddle")

    def test_payoff_coefficient_zero_is_forward_call(self):
        f = payoff_coefficients(100.0, W, 4)
        assert f.shape == (5,)
        # undiscounted call on exp(N(mu, s^2)) = BS call with spot exp(mu + s^2/2)
        spot = math.exp(W.mu_w + 0.5 * W.sigma_w ** 2)
        expected = black_scholes_price(spot, 100.0, 1.0, 0.0, 0.0, W.sigma_w, "call")
        assert f[0] == pytest.approx(expected, rel=1e-9)


@pytest.mark.parametrize("K", np.linspace(3.2, 6.0, 10))
def test_tail_kernels_to_order_40(K):
    order = 40

    def integrand(y: float) -> np.ndarray:
        basis = normalized_hermite(W.standardize(y), order) * W.pdf(y)
        return np.concatenate([basis, y * basis, y * y * basis])

    hi = W.mu_w + 14 * W.sigma_w
    value, _ = quad_vec(integrand, K, hi, epsabs=1e-13, epsrel=1e-12, limit=400)
    l, h, q = tail_kernels(K, W, order)
    np.testing.assert_allclose(l[:, 0], value[: order + 1], atol=1e-10)
    np.testing.assert_allclose(h[:, 0], value[order + 1 : 2 * order + 2], atol=1e-9)
    np.testing.assert_allclose(q[:, 0], value[2 * order + 2 :], atol=1e-8)
    for n in (0, 1, 2, 17, 40):
        assert coeff_l(n, K, W) == pytest.approx(value[n], abs=1e-10)
        assert coeff_h(n, K, W) == pytest.approx(value[order + 1 + n], abs=1e-9)
