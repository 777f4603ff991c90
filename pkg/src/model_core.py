#!/usr/bin/env python3
"""
SVJ model definition, parameter checks, the generator matrix on the graded
monomial basis, and moment / Hermite-moment computation through the
polynomial property.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np
import pandas as pd
from scipy import sparse
from scipy.integrate import solve_ivp
from scipy.sparse.linalg import expm_multiply

from src.errors import NumericalError, ParameterError

logger = logging.getLogger(__name__)

EXPM_METHOD = os.getenv("SVJQ_EXPM_METHOD", "expm").lower()

MODEL_KEYS = ("kappa", "theta", "sigma", "rho", "v_min", "v_max", "r", "delta", "v0", "s0")


@dataclass(frozen=True)
class SvjParams:
    """Risk-neutral SVJ parameters. Rates and variances are annualised."""

    kappa: float
    theta: float
    sigma: float
    rho: float
    v_min: float
    v_max: float
    r: float
    delta: float
    v0: float
    s0: float

    @property
    def x0(self) -> float:
        return math.log(self.s0)

    @property
    def q_scale(self) -> float:
        return (math.sqrt(self.v_max) - math.sqrt(self.v_min)) ** 2

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "SvjParams":
        missing = [k for k in MODEL_KEYS if k not in data]
        if missing:
            raise ParameterError(f"Missing model keys: {', '.join(missing)}", {"missing": missing})
        return cls(**{k: float(data[k]) for k in MODEL_KEYS})

    def to_dict(self) -> Dict[str, float]:
        return {k: getattr(self, k) for k in MODEL_KEYS}


@dataclass(frozen=True)
class GaussianWeight:
    """Gaussian weight w = N(mu_w, sigma_w^2) defining L^2_w."""

    mu_w: float
    sigma_w: float

    def standardize(self, x):
        return (np.asarray(x, dtype=float) - self.mu_w) / self.sigma_w

    def pdf(self, x):
        z = self.standardize(x)
        return np.exp(-0.5 * z * z) / (self.sigma_w * math.sqrt(2.0 * math.pi))


@dataclass
class ValidationReport:
    checks: Dict[str, bool] = field(default_factory=dict)
    failures: List[str] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)
    interior_lhs: float = float("nan")
    interior_rhs: float = float("nan")

    @property
    def ok(self) -> bool:
        return not self.failures

    def raise_for_failures(self) -> None:
        if self.failures:
            raise ParameterError("; ".join(self.failures), {"checks": self.checks})


def validate_params(p: SvjParams, T: float, w: Optional[GaussianWeight] = None) -> ValidationReport:
    """Check the parameter restrictions needed for existence and for ell in L^2_w.

    Hard failures block pricing. The interior condition (the process never
    touches the boundary of [v_min, v_max]) is only reported as a warning.
    """
    report = ValidationReport()

    def check(name: str, passed: bool, message: str) -> None:
        report.checks[name] = bool(passed)
        if not passed:
            report.failures.append(message)

    check("v_min_positive", p.v_min > 0, f"v_min must be > 0 (got {p.v_min})")
    check("v_range", p.v_min < p.v_max, f"v_min must be < v_max (got {p.v_min} >= {p.v_max})")
    check("rho_squared", p.rho * p.rho < 1.0, f"rho^2 must be < 1 (got rho={p.rho})")
    check("v0_in_range", p.v_min <= p.v0 <= p.v_max, f"v0={p.v0} outside [{p.v_min}, {p.v_max}]")
    check("theta_in_range", p.v_min <= p.theta <= p.v_max, f"theta={p.theta} outside [{p.v_min}, {p.v_max}]")
    check("kappa_nonnegative", p.kappa >= 0, f"kappa must be >= 0 (got {p.kappa})")
    check("sigma_positive", p.sigma > 0, f"sigma must be > 0 (got {p.sigma})")
    check("s0_positive", p.s0 > 0, f"s0 must be > 0 (got {p.s0})")
    check("maturity_positive", T > 0, f"T must be > 0 (got {T})")
    if w is not None:
        bound = p.v_max * T / 2.0
        check(
            "weight_variance",
            w.sigma_w > 0 and w.sigma_w ** 2 > bound,
            f"sigma_w^2 must exceed v_max*T/2 = {bound:.6g} (got {w.sigma_w ** 2:.6g})",
        )

    if report.checks.get("v_range") and report.checks.get("v_min_positive"):
        lhs = p.sigma ** 2 * (p.v_max - p.v_min) / p.q_scale
        rhs = 2.0 * p.kappa * min(p.v_max - p.theta, p.theta - p.v_min)
        report.interior_lhs, report.interior_rhs = lhs, rhs
        report.checks["interior_condition"] = lhs <= rhs
        if lhs > rhs:
            message = f"interior condition fails: {lhs:.4g} > {rhs:.4g}; V may reach the boundary"
            report.warnings.append(message)
            logger.warning(message)
    return report


def q_of_v(p: SvjParams, v):
    """Q(v) = (v - v_min)(v_max - v) / (sqrt(v_max) - sqrt(v_min))^2."""
    v = np.asarray(v, dtype=float)
    out = (v - p.v_min) * (p.v_max - v) / p.q_scale
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class PolyBasis:
    """Graded monomial basis v^i x^j, i + j <= N.

    Degree blocks come in increasing order; inside degree k the monomials are
    ordered by increasing power of v: x^k, v x^(k-1), ..., v^k. Pol_n is
    therefore the leading block of size (n+2)(n+1)/2.
    """

    degree_cap: int

    def __post_init__(self):
        if self.degree_cap < 0:
            raise ParameterError(f"degree cap must be >= 0 (got {self.degree_cap})")

    @staticmethod
    def block_dim(n: int) -> int:
        return (n + 2) * (n + 1) // 2

    @property
    def dim(self) -> int:
        return self.block_dim(self.degree_cap)

    @cached_property
    def exponent_table(self) -> Tuple[Tuple[int, int], ...]:
        return tuple((i, k - i) for k in range(self.degree_cap + 1) for i in range(k + 1))

    @cached_property
    def _positions(self) -> Dict[Tuple[int, int], int]:
        return {pair: idx for idx, pair in enumerate(self.exponent_table)}

    def index(self, i: int, j: int) -> int:
        return self._positions[(i, j)]

    def evaluate(self, v: float, x: float, n: Optional[int] = None) -> np.ndarray:
        size = self.dim if n is None else self.block_dim(n)
        table = np.asarray(self.exponent_table[:size])
        return np.power(float(v), table[:, 0]) * np.power(float(x), table[:, 1])

    def coordinates(self, coefficients: Mapping[Tuple[int, int], float]) -> np.ndarray:
        vec = np.zeros(self.dim)
        for (i, j), c in coefficients.items():
            vec[self.index(i, j)] += c
        return vec

    def degree_of(self, p_vec: np.ndarray) -> int:
        nonzero = np.flatnonzero(np.asarray(p_vec))
        if nonzero.size == 0:
            return 0
        i, j = self.exponent_table[int(nonzero[-1])]
        return i + j


@dataclass(frozen=True)
class GeneratorMatrix:
    """Matrix of G on a PolyBasis; column c holds the coordinates of G h_c."""

    basis: PolyBasis
    entries: sparse.csr_matrix

    def block(self, n: int) -> sparse.csr_matrix:
        size = PolyBasis.block_dim(n)
        return self.entries[:size, :size]

    def dense(self) -> np.ndarray:
        return self.entries.toarray()


def build_generator(p: SvjParams, basis: PolyBasis) -> GeneratorMatrix:
    """Apply G f = b'grad f + Tr(a Hess f)/2 to every monomial of the basis."""
    c = p.q_scale
    q2, q1, q0 = -1.0 / c, (p.v_min + p.v_max) / c, -p.v_min * p.v_max / c
    drift_x = p.r - p.delta
    rows: List[int] = []
    cols: List[int] = []
    data: List[float] = []

    for col, (i, j) in enumerate(basis.exponent_table):
        terms: Dict[Tuple[int, int], float] = {}

        def add(a: int, b: int, coef: float) -> None:
            if coef != 0.0 and a >= 0 and b >= 0:
                terms[(a, b)] = terms.get((a, b), 0.0) + coef

        # kappa (theta - v) d/dv
        add(i - 1, j, p.kappa * p.theta * i)
        add(i, j, -p.kappa * i)
        # (r - delta - v/2) d/dx
        add(i, j - 1, drift_x * j)
        add(i + 1, j - 1, -0.5 * j)
        # sigma^2 Q(v) / 2 d2/dv2
        vv = 0.5 * p.sigma ** 2 * i * (i - 1)
        add(i, j, vv * q2)
        add(i - 1, j, vv * q1)
        add(i - 2, j, vv * q0)
        # rho sigma Q(v) d2/dvdx
        vx = p.rho * p.sigma * i * j
        add(i + 1, j - 1, vx * q2)
        add(i, j - 1, vx * q1)
        add(i - 1, j - 1, vx * q0)
        # v / 2 d2/dx2
        add(i + 1, j - 2, 0.5 * j * (j - 1))

        for (a, b), coef in terms.items():
            rows.append(basis.index(a, b))
            cols.append(col)
            data.append(coef)

    entries = sparse.coo_matrix((data, (rows, cols)), shape=(basis.dim, basis.dim)).tocsr()
    return GeneratorMatrix(basis=basis, entries=entries)


def _exp_action(matrix: sparse.spmatrix, vec: np.ndarray, horizon: float, method: str) -> np.ndarray:
    if horizon == 0.0:
        return np.array(vec, dtype=float)
    if method == "ode":
        sol = solve_ivp(
            lambda _t, y: matrix @ y,
            (0.0, horizon),
            np.asarray(vec, dtype=float),
            method="DOP853",
            rtol=1e-12,
            atol=1e-14,
        )
        if not sol.success:
            raise NumericalError(f"ODE integration of the moment system failed: {sol.message}")
        return sol.y[:, -1]
    return expm_multiply(horizon * matrix, np.asarray(vec, dtype=float))


def conditional_moment(
    g: GeneratorMatrix,
    p_vec: np.ndarray,
    horizon: float,
    state: Tuple[float, float],
    method: Optional[str] = None,
) -> float:
    """E[p(V_T, X_T) | V_t = v, X_t = x] = h(v, x)' exp(horizon G) p_vec.

    Only the Pol_n block holding p is exponentiated, n being the degree of p.
    """
    if horizon < 0:
        raise ParameterError(f"horizon must be >= 0 (got {horizon})")
    p_vec = np.asarray(p_vec, dtype=float)
    n = g.basis.degree_of(p_vec)
    size = PolyBasis.block_dim(n)
    evolved = _exp_action(g.block(n), p_vec[:size], horizon, method or EXPM_METHOD)
    return float(g.basis.evaluate(state[0], state[1], n) @ evolved)


def moment_table(
    p: SvjParams,
    T: float,
    degree: int,
    state: Optional[Tuple[float, float]] = None,
    method: Optional[str] = None,
) -> Dict[Tuple[int, int], float]:
    """E[V_T^i X_T^j] for all i + j <= degree via one adjoint exponential action."""
    basis = PolyBasis(degree)
    gen = build_generator(p, basis)
    v, x = state if state is not None else (p.v0, p.x0)
    u = _exp_action(gen.entries.T.tocsr(), basis.evaluate(v, x), T, method or EXPM_METHOD)
    return {pair: float(u[idx]) for idx, pair in enumerate(basis.exponent_table)}


def expected_log_price(p: SvjParams, T: float) -> float:
    return moment_table(p, T, 1)[(0, 1)]


def default_weight(p: SvjParams, T: float) -> GaussianWeight:
    """sigma_w = sqrt(v_max T / 2) + 1e-4 and mu_w = E[X_T]."""
    return GaussianWeight(mu_w=expected_log_price(p, T), sigma_w=math.sqrt(p.v_max * T / 2.0) + 1e-4)


def hermite_coefficients(order: int, w: GaussianWeight) -> np.ndarray:
    """Row n holds the coefficients of H_n(mu_w + y) in powers of y.

    Built with the normalised three-term recurrence
    H_{n+1} = (z H_n - sqrt(n) H_{n-1}) / sqrt(n+1), z = y / sigma_w.
    """
    coeffs = np.zeros((order + 1, order + 1))
    coeffs[0, 0] = 1.0
    if order >= 1:
        coeffs[1, 1] = 1.0 / w.sigma_w
    for n in range(1, order):
        shifted = np.zeros(order + 1)
        shifted[1:] = coeffs[n, :-1] / w.sigma_w
        coeffs[n + 1] = (shifted - math.sqrt(n) * coeffs[n - 1]) / math.sqrt(n + 1)
    return coeffs


@dataclass(frozen=True)
class HermiteMoments:
    order: int
    values: np.ndarray
    weight: GaussianWeight
    maturity: float
    max_intermediate: float = 0.0

    @property
    def mean(self) -> float:
        """E[X_T^(M)]; only ell_0 and ell_1 contribute."""
        ell1 = self.values[1] if self.order >= 1 else 0.0
        return self.weight.mu_w + self.weight.sigma_w * ell1

    @property
    def variance(self) -> float:
        if self.order < 2:
            raise ParameterError("variance needs Hermite moments up to order 2")
        s = self.weight.sigma_w
        second = s * s * (math.sqrt(2.0) * self.values[2] + 1.0)
        return second - (s * self.values[1]) ** 2

    def truncated(self, order: int) -> "HermiteMoments":
        if order < 0 or order > self.order:
            raise ParameterError(
                f"cannot truncate order-{self.order} moments to order {order}",
                {"order": order, "available": self.order},
            )
        return HermiteMoments(order, self.values[: order + 1].copy(), self.weight, self.maturity, self.max_intermediate)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"n": np.arange(self.order + 1), "ell_n": self.values})


def hermite_moments(
    p: SvjParams,
    T: float,
    w: GaussianWeight,
    M: int,
    method: Optional[str] = None,
) -> HermiteMoments:
    """ell_n = E[H_n(X_T)] for n <= M.

    The generator does not depend on x, so moments of X_T - mu_w are moments
    of X_T started from x0 - mu_w; working centred keeps the monomial moments
    small. The graded basis makes Pol_n the leading block, so a single adjoint
    action exp(T G') h(v0, x0 - mu_w) serves every degree at once.
    """
    if M < 0:
        raise ParameterError(f"M must be >= 0 (got {M})")
    validate_params(p, T, w).raise_for_failures()

    basis = PolyBasis(M)
    gen = build_generator(p, basis)
    state = basis.evaluate(p.v0, p.x0 - w.mu_w)
    u = _exp_action(gen.entries.T.tocsr(), state, T, method or EXPM_METHOD)
    centred = np.array([u[basis.index(0, j)] for j in range(M + 1)])

    coeffs = hermite_coefficients(M, w)
    terms = coeffs * centred[np.newaxis, :]
    values = terms.sum(axis=1)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise NumericalError(
            f"non-finite Hermite moment at degree {int(bad[0])}", {"degree": int(bad[0]), "M": M}
        )
    max_intermediate = float(np.max(np.abs(terms)))
    logger.info("Hermite moments computed: M=%d T=%.4g max intermediate %.3e", M, T, max_intermediate)
    return HermiteMoments(order=M, values=values, weight=w, maturity=T, max_intermediate=max_intermediate)


def log_price_moments(p: SvjParams, T: float, order: int = 2, method: Optional[str] = None) -> Dict[str, float]:
    """Raw moments E[X_T^k] for k <= order plus E[V_T]."""
    table = moment_table(p, T, max(order, 1), method=method)
    out = {f"x{k}": table[(0, k)] for k in range(order + 1)}
    out["v1"] = table[(1, 0)]
    return out
