#!/usr/bin/env python3
"""
Error Lab

Measures the quantization error of the Hermite-series pipeline against the
series price, the price-space quantization error against the asymptotic
(1/3)-quasi-norm bound, Zador-rate slopes, and negativity of the truncated
density at low truncation orders.
"""

from __future__ import annotations

import asyncio
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from numpy.polynomial.legendre import leggauss
from scipy.integrate import trapezoid
from scipy.special import ndtri

from src.errors import ParameterError
from src.hermite import TruncatedDensity, price_european_series
from src.model_core import GaussianWeight, HermiteMoments, SvjParams, hermite_moments
from src.pricing import OptionSpec, price_european_grid
from src.quantizer_poly import NEWTON_MAX_ITER, NEWTON_TOL, QuantGrid, newton_solve, quantize_law

logger = logging.getLogger(__name__)

BOUND_SLACK = 1.15
SCAN_POINTS = 10_000
SCAN_SPAN = 6.0
# log-price integration range in sigma_w units
LOG_SPAN = 16.0

_GL_NODES, _GL_WEIGHTS = leggauss(16)


def _panel_nodes(lo: float, hi: float, panels: int) -> Tuple[np.ndarray, np.ndarray]:
    bounds = np.linspace(lo, hi, panels + 1)
    half = 0.5 * np.diff(bounds)[:, None]
    x = (0.5 * (bounds[1:] + bounds[:-1]))[:, None] + half * _GL_NODES[None, :]
    return x, half * _GL_WEIGHTS[None, :]


class PriceSpaceLaw:
    """Law of S = exp(X) for X with density g_T^(M).

    Tail moments int_K^inf s^k h(s) ds = int_{ln K}^inf e^{kx} g(x) dx come from
    composite Gauss-Legendre panels: whole panels are pre-summed, the panel
    holding ln K is integrated on the fly.
    """

    def __init__(self, density: TruncatedDensity, panels: int = 600):
        self.density = density
        w = density.weight
        self.lo = w.mu_w - LOG_SPAN * w.sigma_w
        self.hi = w.mu_w + LOG_SPAN * w.sigma_w + 2.0 * w.sigma_w ** 2
        self.bounds = np.linspace(self.lo, self.hi, panels + 1)
        x, wts = _panel_nodes(self.lo, self.hi, panels)
        g = density.pdf(x.ravel()).reshape(x.shape) * wts
        per_panel = np.stack([np.sum(g * np.exp(k * x), axis=1) for k in range(3)])
        # suffix[k, j] = integral over panels j.. end
        self._suffix = np.concatenate(
            [np.cumsum(per_panel[:, ::-1], axis=1)[:, ::-1], np.zeros((3, 1))], axis=1
        )

    @property
    def mean(self) -> float:
        return float(self._suffix[1, 0])

    @property
    def variance(self) -> float:
        return float(self._suffix[2, 0] / self._suffix[0, 0] - (self._suffix[1, 0] / self._suffix[0, 0]) ** 2)

    def pdf(self, s):
        s = np.atleast_1d(np.asarray(s, dtype=float))
        out = np.zeros_like(s)
        pos = s > 0
        out[pos] = self.density.pdf(np.log(s[pos])) / s[pos]
        return out

    def tail_moments(self, edges) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        edges = np.atleast_1d(np.asarray(edges, dtype=float))
        out = np.zeros((3, edges.size))
        with np.errstate(divide="ignore"):
            a = np.where(edges > 0, np.log(np.where(edges > 0, edges, 1.0)), -np.inf)
        out[:, a <= self.lo] = self._suffix[:, :1]
        inner = (a > self.lo) & (a < self.hi)
        if np.any(inner):
            ai = a[inner]
            j = np.minimum(np.searchsorted(self.bounds, ai, side="right") - 1, self.bounds.size - 2)
            right = self.bounds[j + 1]
            half = 0.5 * (right - ai)[:, None]
            x = 0.5 * (right + ai)[:, None] + half * _GL_NODES[None, :]
            g = self.density.pdf(x.ravel()).reshape(x.shape) * half * _GL_WEIGHTS[None, :]
            partial = np.stack([np.sum(g * np.exp(k * x), axis=1) for k in range(3)])
            out[:, inner] = partial + self._suffix[:, j + 1]
        return out[0], out[1], out[2]


def price_space_quantizer(
    density: TruncatedDensity,
    N: int,
    tol: float = NEWTON_TOL,
    max_iter: int = NEWTON_MAX_ITER,
    panels: int = 600,
) -> QuantGrid:
    """Stationary N-grid of S_T^(M) = exp(X_T^(M)) in price units."""
    law = PriceSpaceLaw(density, panels)
    w = density.weight
    init = np.exp(w.mu_w + w.sigma_w * ndtri((np.arange(1, N + 1) - 0.5) / N))
    # Newton tolerance scales with the price level
    scaled_tol = tol * max(1.0, law.mean)
    fallback = (law.mean, math.sqrt(max(law.variance, 0.0)))
    return quantize_law(
        law,
        init,
        tol=scaled_tol,
        max_iter=max_iter,
        units="price",
        fallback=fallback,
        meta={"M": density.order},
    )


def err2(
    M: int,
    N: int,
    p: SvjParams,
    T: float,
    w: GaussianWeight,
    spec: OptionSpec,
    moments: Optional[HermiteMoments] = None,
) -> float:
    """|series price - price on the stationary N-grid| at truncation M."""
    lm = moments.truncated(M) if moments is not None else hermite_moments(p, T, w, M)
    density = TruncatedDensity(lm, w)
    series = price_european_series(density, spec.strike, T, p.r, spec.kind)
    grid = newton_solve(None, lm, w, N=N)
    return abs(series - price_european_grid(grid, spec, p.r).price)


def truncation_error(
    M: int,
    M_ref: int,
    p: SvjParams,
    T: float,
    w: GaussianWeight,
    spec: OptionSpec,
    moments: Optional[HermiteMoments] = None,
) -> float:
    """Empirical err1: |series(M) - series(M_ref)|."""
    lm = moments if moments is not None and moments.order >= M_ref else hermite_moments(p, T, w, M_ref)

    def at(order: int) -> float:
        return price_european_series(TruncatedDensity(lm.truncated(order), w), spec.strike, T, p.r, spec.kind)

    return abs(at(M) - at(M_ref))


def quasinorm_13(
    M: int,
    p: SvjParams,
    T: float,
    w: GaussianWeight,
    moments: Optional[HermiteMoments] = None,
    panels: int = 400,
) -> float:
    """(int_0^inf |h(s)|^{1/3} ds)^3 with h(s) = g(ln s)/s.

    After s = e^x the integrand is |g(x)|^{1/3} e^{2x/3}. The absolute value
    only matters where the truncated density dips below zero.
    """
    lm = moments.truncated(M) if moments is not None else hermite_moments(p, T, w, M)
    return density_quasinorm_13(TruncatedDensity(lm, w), panels)


def density_quasinorm_13(density: TruncatedDensity, panels: int = 400) -> float:
    w = density.weight
    lo = w.mu_w - LOG_SPAN * w.sigma_w
    hi = w.mu_w + LOG_SPAN * w.sigma_w + 2.0 * w.sigma_w ** 2
    x, wts = _panel_nodes(lo, hi, panels)
    g = density.pdf(x.ravel()).reshape(x.shape)
    integral = float(np.sum(wts * np.cbrt(np.abs(g)) * np.exp(2.0 * x / 3.0)))
    if not math.isfinite(integral):
        raise ParameterError("(1/3)-quasi-norm integral diverged")
    return integral ** 3


def lognormal_quasinorm_13(alpha: float, beta: float) -> float:
    """Closed form for S = exp(N(alpha, beta^2))."""
    inner = (beta * math.sqrt(2.0 * math.pi)) ** (-1.0 / 3.0) * beta * math.sqrt(6.0 * math.pi)
    return (inner * math.exp(2.0 * alpha / 3.0 + 2.0 * beta * beta / 3.0)) ** 3


@dataclass
class ErrorStudy:
    M: int
    N_ladder: List[int]
    err2_values: List[float] = field(default_factory=list)
    s_errors: List[float] = field(default_factory=list)
    distortions: List[float] = field(default_factory=list)
    norm_13: float = float("nan")
    series_price: float = float("nan")

    @property
    def bound(self) -> float:
        return math.sqrt(self.norm_13) / (2.0 * math.sqrt(3.0))

    def to_frame(self) -> pd.DataFrame:
        N = np.asarray(self.N_ladder, dtype=float)
        return pd.DataFrame(
            {
                "N": self.N_ladder,
                "err2": self.err2_values,
                "N_err2": N * np.asarray(self.err2_values),
                "s_error": self.s_errors,
                "N_s_error": N * np.asarray(self.s_errors),
                "bound": self.bound,
            }
        )


@dataclass
class BoundReport:
    satisfied: Optional[bool]
    threshold: float
    trajectory: List[Tuple[int, float]]
    checked: List[int]


def bound_check(study: ErrorStudy, slack: float = BOUND_SLACK) -> BoundReport:
    """N * ||S - S_hat||_2 against slack * ||h||_{1/3}^{1/2} / (2 sqrt 3) at the two largest N."""
    threshold = slack * study.bound
    trajectory = [(int(n), float(n * e)) for n, e in zip(study.N_ladder, study.s_errors)]
    if len(trajectory) < 2:
        return BoundReport(None, threshold, trajectory, [])
    tail = sorted(trajectory)[-2:]
    satisfied = all(value <= threshold for _, value in tail)
    if not satisfied:
        logger.warning("quantization bound violated: %s > %.6g", tail, threshold)
    return BoundReport(satisfied, threshold, trajectory, [n for n, _ in tail])


def _study_cell(lm: HermiteMoments, w: GaussianWeight, spec: OptionSpec, r: float, series: float, N: int) -> Tuple[float, float, float]:
    density = TruncatedDensity(lm, w)
    grid = newton_solve(None, lm, w, N=N)
    e2 = abs(series - price_european_grid(grid, spec, r).price)
    s_grid = price_space_quantizer(density, N)
    return e2, math.sqrt(max(s_grid.distortion, 0.0)), grid.distortion


def _validate_ladder(N_ladder: Sequence[int]) -> List[int]:
    ladder = [int(n) for n in N_ladder]
    if not ladder:
        raise ParameterError("N ladder is empty")
    if any(n < 1 for n in ladder):
        raise ParameterError("N ladder entries must be >= 1", {"N_ladder": ladder})
    return ladder


def _prepare(M, p, T, w, spec, moments):
    lm = moments.truncated(M) if moments is not None else hermite_moments(p, T, w, M)
    density = TruncatedDensity(lm, w)
    series = price_european_series(density, spec.strike, T, p.r, spec.kind)
    return lm, density, series


def run_error_study(
    M: int,
    N_ladder: Sequence[int],
    p: SvjParams,
    T: float,
    w: GaussianWeight,
    spec: OptionSpec,
    moments: Optional[HermiteMoments] = None,
) -> ErrorStudy:
    ladder = _validate_ladder(N_ladder)
    lm, density, series = _prepare(M, p, T, w, spec, moments)
    study = ErrorStudy(M=M, N_ladder=ladder, series_price=series, norm_13=density_quasinorm_13(density))
    for N in ladder:
        e2, s_err, dist = _study_cell(lm, w, spec, p.r, series, N)
        study.err2_values.append(e2)
        study.s_errors.append(s_err)
        study.distortions.append(dist)
    return study


async def run_error_study_async(
    M: int,
    N_ladder: Sequence[int],
    p: SvjParams,
    T: float,
    w: GaussianWeight,
    spec: OptionSpec,
    moments: Optional[HermiteMoments] = None,
) -> ErrorStudy:
    """Same as run_error_study with the ladder cells fanned out to threads."""
    ladder = _validate_ladder(N_ladder)
    lm, density, series = await asyncio.to_thread(_prepare, M, p, T, w, spec, moments)
    cells = await asyncio.gather(
        *[asyncio.to_thread(_study_cell, lm, w, spec, p.r, series, N) for N in ladder]
    )
    norm = await asyncio.to_thread(density_quasinorm_13, density)
    return ErrorStudy(
        M=M,
        N_ladder=ladder,
        err2_values=[c[0] for c in cells],
        s_errors=[c[1] for c in cells],
        distortions=[c[2] for c in cells],
        norm_13=norm,
        series_price=series,
    )


def zador_slope(N_ladder: Sequence[int], distortions: Sequence[float]) -> float:
    """Log-log slope of sqrt(distortion) against N."""
    return float(np.polyfit(np.log(N_ladder), 0.5 * np.log(distortions), 1)[0])


def density_negativity_scan(
    M_list: Sequence[int],
    p: SvjParams,
    T: float,
    w: GaussianWeight,
    moments: Optional[HermiteMoments] = None,
) -> pd.DataFrame:
    """Min density, negative mass and argmin over mu_w +/- 6 sigma_w for each M."""
    if not M_list:
        raise ParameterError("M list is empty")
    top = max(M_list)
    lm = moments if moments is not None and moments.order >= top else hermite_moments(p, T, w, top)
    x = np.linspace(w.mu_w - SCAN_SPAN * w.sigma_w, w.mu_w + SCAN_SPAN * w.sigma_w, SCAN_POINTS)
    rows: List[Dict[str, float]] = []
    for M in M_list:
        g = TruncatedDensity(lm.truncated(M), w).pdf(x)
        idx = int(np.argmin(g))
        rows.append(
            {
                "M": int(M),
                "min_density": float(g[idx]),
                "negative_mass": float(trapezoid(np.minimum(g, 0.0), x) * -1.0),
                "argmin": float(x[idx]),
            }
        )
        if g[idx] < 0:
            logger.warning("negative density at M=%d: min %.3e at x=%.4f", M, g[idx], x[idx])
    return pd.DataFrame(rows, columns=["M", "min_density", "negative_mass", "argmin"])
