#!/usr/bin/env python3
"""
Generalized Hermite basis of L^2_w, the closed-form tail kernels
l_n(K) = int_K^inf H_n w, h_n(K) = int_K^inf y H_n w, the second-moment
kernel q_n(K) = int_K^inf y^2 H_n w, the truncated density g_T^(M) and the
Hermite-series European price.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.integrate import quad_vec
from scipy.special import ndtr

from src.errors import NumericalError, ParameterError
from src.model_core import GaussianWeight, HermiteMoments

logger = logging.getLogger(__name__)

SQRT_2PI = math.sqrt(2.0 * math.pi)

# payoff coefficients integrate over mu_w +/- this many sigma_w
PAYOFF_SPAN = 12.0


def std_pdf(z):
    z = np.asarray(z, dtype=float)
    return np.exp(-0.5 * z * z) / SQRT_2PI


def normalized_hermite(z, order: int) -> np.ndarray:
    """Rows 0..order of He_n(z) / sqrt(n!) via the normalised recurrence."""
    z = np.asarray(z, dtype=float)
    out = np.empty((order + 1,) + z.shape)
    out[0] = 1.0
    if order >= 1:
        out[1] = z
    for n in range(1, order):
        out[n + 1] = (z * out[n] - math.sqrt(n) * out[n - 1]) / math.sqrt(n + 1)
    return out


@dataclass(frozen=True)
class HermiteEvaluator:
    weight: GaussianWeight
    max_order: int

    def values(self, x) -> np.ndarray:
        return normalized_hermite(self.weight.standardize(x), self.max_order)

    def __call__(self, n: int, x):
        if not 0 <= n <= self.max_order:
            raise ParameterError(f"order {n} outside [0, {self.max_order}]")
        return self.values(x)[n]


def hermite_H(n: int, x, w: GaussianWeight):
    """H_n(x) = He_n((x - mu_w)/sigma_w) / sqrt(n!)."""
    if n < 0:
        raise ParameterError(f"n must be >= 0 (got {n})")
    out = normalized_hermite(w.standardize(x), n)[n]
    return float(out) if out.ndim == 0 else out


def orthonormality_check(m: int, n: int, w: GaussianWeight) -> float:
    """<H_m, H_n>_w by Gauss-Hermite quadrature, exact for these degrees."""
    nodes, weights = hermegauss(max(m, n) + 2)
    weights = weights / SQRT_2PI
    x = w.mu_w + w.sigma_w * nodes
    return float(np.sum(weights * hermite_H(m, x, w) * hermite_H(n, x, w)))


def _tail_terms(edges, w: GaussianWeight, order: int) -> np.ndarray:
    """tau_m(K) = int_K^inf H_m w for m = -2..order+2, stored at row m + 2.

    tau_0 is the upper tail mass; tau_m = H_{m-1}(K) w(K) sigma_w / sqrt(m)
    for m >= 1. Edges may be +/-inf.
    """
    edges = np.atleast_1d(np.asarray(edges, dtype=float))
    finite = np.isfinite(edges)
    z = np.where(finite, (np.where(finite, edges, 0.0) - w.mu_w) / w.sigma_w, 0.0)
    tau = np.zeros((order + 5, edges.size))
    tau[2] = np.where(finite, ndtr(-z), np.where(edges < 0, 1.0, 0.0))
    he = normalized_hermite(z, order + 1)
    phi = np.where(finite, std_pdf(z), 0.0)
    for m in range(1, order + 3):
        tau[m + 2] = he[m - 1] * phi / math.sqrt(m)
    return tau


def tail_kernels(edges, w: GaussianWeight, order: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(l, h, q) kernels, each shaped (order + 1, len(edges)).

    Uses z He_n = sqrt(n+1) He_{n+1} + sqrt(n) He_{n-1} in normalised form,
    once for h and twice for q.
    """
    tau = _tail_terms(edges, w, order)
    mu, s = w.mu_w, w.sigma_w
    rows = np.arange(order + 1) + 2
    n = np.arange(order + 1)[:, None]

    def at(shift: int) -> np.ndarray:
        return tau[rows + shift]

    first = np.sqrt(n + 1) * at(1) + np.sqrt(n) * at(-1)
    second = np.sqrt((n + 1) * (n + 2)) * at(2) + (2 * n + 1) * at(0) + np.sqrt(n * np.maximum(n - 1, 0)) * at(-2)
    l = at(0)
    h = s * first + mu * l
    q = s * s * second + 2.0 * s * mu * first + mu * mu * l
    return l, h, q


def coeff_l(n: int, K: float, w: GaussianWeight) -> float:
    """l_n(K) = int_K^inf H_n(y) w(y) dy. l_0 is the upper tail 1 - Phi."""
    if n < 0:
        raise ParameterError(f"n must be >= 0 (got {n})")
    return float(_tail_terms(K, w, n)[n + 2, 0])


def coeff_h(n: int, K: float, w: GaussianWeight) -> float:
    """h_n(K) = int_K^inf y H_n(y) w(y) dy, branch by branch."""
    if n < 0:
        raise ParameterError(f"n must be >= 0 (got {n})")
    mu, s = w.mu_w, w.sigma_w
    if not np.isfinite(K):
        if K > 0:
            return 0.0
        return {0: mu, 1: s}.get(n, 0.0)
    z = (K - mu) / s
    phi = float(std_pdf(z))
    upper = float(ndtr(-z))
    if n == 0:
        return s * phi + mu * upper
    if n == 1:
        return s * (z * phi + upper) + mu * phi
    he = normalized_hermite(z, n)
    return phi * (s * he[n] + s * math.sqrt(n / (n - 1)) * he[n - 2] + mu * he[n - 1] / math.sqrt(n))


def coeff_q(n: int, K: float, w: GaussianWeight) -> float:
    """q_n(K) = int_K^inf y^2 H_n(y) w(y) dy."""
    return float(tail_kernels(K, w, n)[2][n, 0])


@dataclass(frozen=True)
class TruncatedDensity:
    """g_T^(M)(x) = sum_n ell_n H_n(x) w(x); may dip below zero for small M."""

    moments: HermiteMoments
    weight: GaussianWeight

    @classmethod
    def from_moments(cls, moments: HermiteMoments) -> "TruncatedDensity":
        return cls(moments=moments, weight=moments.weight)

    @property
    def order(self) -> int:
        return self.moments.order

    @property
    def mean(self) -> float:
        return self.moments.mean

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        z = self.weight.standardize(x)
        series = np.tensordot(self.moments.values, normalized_hermite(z, self.order), axes=1)
        out = series * std_pdf(z) / self.weight.sigma_w
        return float(out) if out.ndim == 0 else out

    __call__ = pdf

    def tail_moments(self, edges) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """int_K^inf y^k g_T^(M)(y) dy for k = 0, 1, 2 at every edge."""
        l, h, q = tail_kernels(edges, self.weight, self.order)
        ell = self.moments.values
        return ell @ l, ell @ h, ell @ q

    def cdf(self, x):
        upper = self.tail_moments(x)[0]
        return 1.0 - upper


def density_g(x, d: TruncatedDensity):
    return d.pdf(x)


def payoff_coefficients(K: float, w: GaussianWeight, M: int, kind: str = "call") -> np.ndarray:
    """f_n = <(e^x - K)^+, H_n>_w (call) or the put analogue, n = 0..M.

    Adaptive vector quadrature in standardised coordinates over the half-line
    where the payoff is nonzero, cut at mu_w +/- PAYOFF_SPAN sigma_w (shifted
    by sigma_w for the exponential factor).
    """
    if K <= 0:
        raise ParameterError(f"strike must be > 0 (got {K})")
    mu, s = w.mu_w, w.sigma_w
    zk = (math.log(K) - mu) / s
    if kind == "call":
        lo, hi, sign = zk, s + PAYOFF_SPAN, 1.0
    elif kind == "put":
        lo, hi, sign = -PAYOFF_SPAN, zk, -1.0
    else:
        raise ParameterError(f"unknown option kind {kind!r}")
    if lo >= hi:
        return np.zeros(M + 1)

    def integrand(z: float) -> np.ndarray:
        return sign * (math.exp(mu + s * z) - K) * normalized_hermite(z, M) * std_pdf(z)

    coeffs, _err = quad_vec(integrand, lo, hi, epsabs=1e-12, epsrel=1e-11, limit=400)
    coeffs = np.asarray(coeffs, dtype=float)
    bad = np.flatnonzero(~np.isfinite(coeffs))
    if bad.size:
        raise NumericalError(
            f"non-finite payoff coefficient f_{int(bad[0])}; sigma_w too small for the payoff growth",
            {"degree": int(bad[0]), "strike": K},
        )
    return coeffs


def price_european_series(d: TruncatedDensity, K: float, T: float, r: float, kind: str = "call") -> float:
    """e^{-rT} sum_n f_n ell_n."""
    f = payoff_coefficients(K, d.weight, d.order, kind)
    price = math.exp(-r * T) * float(f @ d.moments.values)
    logger.debug("series price K=%.4g M=%d kind=%s -> %.6f", K, d.order, kind, price)
    return price
