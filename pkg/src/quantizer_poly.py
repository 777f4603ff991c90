#!/usr/bin/env python3
"""
Stationary one-dimensional quantizers.

The Newton-Raphson machinery here works on any law exposing closed-form tail
moments int_K^inf y^k f(y) dy (k = 0, 1, 2) and a density. The truncated
Hermite density of X_T^(M) is the main client; the Gaussian mixtures of the
recursive marginal quantizer and the price-space law of the error lab reuse it.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Optional, Protocol, Tuple

import numpy as np
import pandas as pd
from scipy.linalg import LinAlgError, solve_banded
from scipy.special import ndtri

from src.errors import ConvergenceError, ParameterError
from src.hermite import TruncatedDensity
from src.model_core import GaussianWeight, HermiteMoments

logger = logging.getLogger(__name__)

NEWTON_TOL = float(os.getenv("SVJQ_NEWTON_TOL", "1e-9"))
NEWTON_MAX_ITER = int(os.getenv("SVJQ_NEWTON_MAX_ITER", "200"))
MAX_HALVINGS = 30
# a stalled line search within this factor of tol is accepted
STALL_SLACK = 100.0
LLOYD_MAX_ITER = int(os.getenv("SVJQ_LLOYD_MAX_ITER", "20000"))
# Lloyd hands over to Newton once max|E| < LLOYD_HANDOFF * tol
LLOYD_HANDOFF = 1e3
MASS_FLOOR = 1e-14


class QuantizableLaw(Protocol):
    def tail_moments(self, edges) -> Tuple[np.ndarray, np.ndarray, np.ndarray]: ...

    def pdf(self, x): ...


@dataclass
class QuantGrid:
    points: np.ndarray
    weights: np.ndarray
    units: str = "log_price"
    meta: Dict[str, Any] = field(default_factory=dict)
    iterations: int = 0
    residual: float = float("nan")
    distortion: float = float("nan")

    @property
    def N(self) -> int:
        return int(self.points.size)

    def expectation(self, fn: Callable[[np.ndarray], np.ndarray]) -> float:
        return float(np.dot(fn(self.points), self.weights))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"i": np.arange(self.N), "x_i": self.points, "weight_i": self.weights})

    def report(self) -> Dict[str, Any]:
        return {
            "N": self.N,
            "units": self.units,
            "iterations": self.iterations,
            "residual": self.residual,
            "distortion": self.distortion,
            **self.meta,
        }


def check_grid(points) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    if points.ndim != 1 or points.size == 0:
        raise ParameterError("grid must be a non-empty 1-D array")
    gaps = np.diff(points)
    if np.any(gaps == 0):
        raise ParameterError("grid has duplicate points", {"index": int(np.flatnonzero(gaps == 0)[0])})
    if np.any(gaps < 0):
        raise ParameterError("grid is not sorted increasingly", {"index": int(np.flatnonzero(gaps < 0)[0])})
    return points


def cell_edges(points: np.ndarray) -> np.ndarray:
    """Voronoi edges with half-open extreme cells."""
    return np.concatenate(([-np.inf], 0.5 * (points[1:] + points[:-1]), [np.inf]))


def cell_moments(points, law: QuantizableLaw) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-cell int_C y^k f(y) dy for k = 0, 1, 2, from tail moments at the edges."""
    l, h, q = law.tail_moments(cell_edges(points))
    return l[:-1] - l[1:], h[:-1] - h[1:], q[:-1] - q[1:]


def grid_residual(points, law: QuantizableLaw) -> np.ndarray:
    """E_i = int_{C_i} (y - x_i) f(y) dy."""
    mass, first, _ = cell_moments(points, law)
    return first - points * mass


def jacobian_bands(points, law: QuantizableLaw) -> np.ndarray:
    """Tridiagonal Jacobian of grid_residual in solve_banded (1, 1) layout."""
    n = points.size
    mass, _, _ = cell_moments(points, law)
    off = np.zeros(max(n - 1, 0))
    if n > 1:
        mids = 0.5 * (points[1:] + points[:-1])
        off = 0.25 * np.diff(points) * np.asarray(law.pdf(mids), dtype=float)
    bands = np.zeros((3, n))
    bands[0, 1:] = off
    bands[2, :-1] = off
    bands[1] = -mass
    bands[1, 1:] += off
    bands[1, :-1] += off
    return bands


def bands_to_dense(bands: np.ndarray) -> np.ndarray:
    n = bands.shape[1]
    out = np.diag(bands[1])
    if n > 1:
        out += np.diag(bands[0, 1:], 1) + np.diag(bands[2, :-1], -1)
    return out


def distortion_of(points, law: QuantizableLaw) -> float:
    mass, first, second = cell_moments(points, law)
    return float(np.sum(second - 2.0 * points * first + points * points * mass))


def gaussian_quantile_grid(N: int, mean: float, sd: float) -> np.ndarray:
    """N-quantiles of N(mean, sd^2) at probabilities (i - 1/2)/N."""
    if N < 1:
        raise ParameterError(f"N must be >= 1 (got {N})")
    return mean + sd * ndtri((np.arange(1, N + 1) - 0.5) / N)


def lloyd_iterate(
    init,
    law: QuantizableLaw,
    tol: float = NEWTON_TOL,
    max_iter: int = LLOYD_MAX_ITER,
) -> Tuple[np.ndarray, int, float]:
    """Lloyd fixed point x_i <- int_C y f / int_C f; returns (points, iterations, max|E|).

    Stops early, keeping the last ordered grid, if an update would break the
    ordering (possible where a truncated density dips below zero).
    """
    x = check_grid(init).copy()
    worst = float("inf")
    for it in range(max_iter + 1):
        mass, first, _ = cell_moments(x, law)
        worst = float(np.max(np.abs(first - x * mass)))
        if worst < tol or it == max_iter:
            return x, it, worst
        live = mass > MASS_FLOOR
        trial = np.where(live, first / np.where(live, mass, 1.0), x)
        if not np.all(np.isfinite(trial)) or (trial.size > 1 and np.any(np.diff(trial) <= 0)):
            logger.debug("Lloyd update %d breaks the ordering; stopping at max|E|=%.3e", it, worst)
            return x, it, worst
        x = trial
    return x, max_iter, worst


def newton_iterate(
    init,
    law: QuantizableLaw,
    tol: float = NEWTON_TOL,
    max_iter: int = NEWTON_MAX_ITER,
) -> Tuple[np.ndarray, int, float]:
    """Damped Newton on the stationarity equations; returns (points, iterations, max|E|)."""
    x = check_grid(init).copy()
    resid = grid_residual(x, law)
    norm = float(np.linalg.norm(resid))
    worst = float(np.max(np.abs(resid)))
    for it in range(1, max_iter + 1):
        if worst < tol:
            return x, it - 1, worst
        try:
            step = solve_banded((1, 1), jacobian_bands(x, law), resid)
        except (LinAlgError, ValueError) as exc:
            raise ConvergenceError(f"singular Jacobian at iteration {it}", {"iteration": it}) from exc
        if not np.all(np.isfinite(step)):
            raise ConvergenceError(f"non-finite Newton step at iteration {it}", {"iteration": it})

        t = 1.0
        for halving in range(MAX_HALVINGS + 1):
            trial = x - t * step
            if np.all(np.diff(trial) > 0):
                trial_resid = grid_residual(trial, law)
                trial_norm = float(np.linalg.norm(trial_resid))
                if np.isfinite(trial_norm) and trial_norm < norm:
                    break
            t *= 0.5
            logger.debug("iteration %d: halving step (t=%.3g)", it, t)
        else:
            if worst < STALL_SLACK * tol:
                logger.warning("line search stalled at max|E|=%.3e; accepting grid", worst)
                return x, it, worst
            raise ConvergenceError(
                f"line search failed at iteration {it} after {MAX_HALVINGS} halvings",
                {"iteration": it, "residual": worst},
            )

        x, resid, norm = trial, trial_resid, trial_norm
        worst = float(np.max(np.abs(resid)))
        logger.debug("iteration %d: max|E|=%.3e step=%.3g", it, worst, t)

    if worst < tol:
        return x, max_iter, worst
    raise ConvergenceError(
        f"no convergence after {max_iter} iterations (max|E|={worst:.3e})",
        {"iteration": max_iter, "residual": worst},
    )


def quantize_law(
    law: QuantizableLaw,
    init,
    tol: float = NEWTON_TOL,
    max_iter: int = NEWTON_MAX_ITER,
    units: str = "log_price",
    fallback: Optional[Tuple[float, float]] = None,
    meta: Optional[Dict[str, Any]] = None,
    lloyd_max_iter: int = LLOYD_MAX_ITER,
) -> QuantGrid:
    """Stationary grid of law, started from init.

    Lloyd runs first until max|E| < LLOYD_HANDOFF * tol, so init alone fixes
    the basin. Newton then polishes. If the Newton line search fails, Lloyd
    resumes from the hand-over grid down to tol. Only when both stall is
    Newton restarted from Gaussian quantiles of fallback=(mean, sd).
    """
    init = check_grid(init)
    start, lloyd_its, _ = lloyd_iterate(init, law, tol * LLOYD_HANDOFF, lloyd_max_iter)
    try:
        points, iterations, resid = newton_iterate(start, law, tol, max_iter)
    except ConvergenceError as exc:
        logger.warning("Newton failed (%s); continuing Lloyd iterations", exc)
        points, more, resid = lloyd_iterate(start, law, tol, lloyd_max_iter)
        lloyd_its += more
        iterations = 0
        if resid >= STALL_SLACK * tol:
            if fallback is None:
                raise ConvergenceError(
                    f"Lloyd stalled at max|E|={resid:.3e}", {"residual": resid, "lloyd_iterations": lloyd_its}
                ) from exc
            logger.warning("Lloyd stalled at max|E|=%.3e; restarting from moment-matched quantiles", resid)
            points, iterations, resid = newton_iterate(
                gaussian_quantile_grid(init.size, *fallback), law, tol, max_iter
            )
        elif resid >= tol:
            logger.warning("accepting Lloyd grid at max|E|=%.3e", resid)
    mass, _, _ = cell_moments(points, law)
    grid = QuantGrid(
        points=points,
        weights=mass,
        units=units,
        meta={**(meta or {}), "lloyd_iterations": lloyd_its},
        iterations=iterations,
        residual=resid,
        distortion=distortion_of(points, law),
    )
    logger.info(
        "quantizer N=%d converged after %d Lloyd and %d Newton iterations, max|E|=%.2e",
        grid.N,
        lloyd_its,
        iterations,
        resid,
    )
    return grid


def _density(lm: HermiteMoments, w: GaussianWeight) -> TruncatedDensity:
    return TruncatedDensity(moments=lm, weight=w)


def master_residual(grid, lm: HermiteMoments, w: GaussianWeight) -> np.ndarray:
    return grid_residual(check_grid(grid), _density(lm, w))


def jacobian(grid, lm: HermiteMoments, w: GaussianWeight) -> np.ndarray:
    return bands_to_dense(jacobian_bands(check_grid(grid), _density(lm, w)))


def cell_weights(grid, lm: HermiteMoments, w: GaussianWeight) -> np.ndarray:
    return cell_moments(check_grid(grid), _density(lm, w))[0]


def distortion(grid, lm: HermiteMoments, w: GaussianWeight) -> float:
    points = grid.points if isinstance(grid, QuantGrid) else grid
    return distortion_of(check_grid(points), _density(lm, w))


def newton_solve(
    init,
    lm: HermiteMoments,
    w: GaussianWeight,
    tol: float = NEWTON_TOL,
    max_iter: int = NEWTON_MAX_ITER,
    N: Optional[int] = None,
) -> QuantGrid:
    """Stationary quantizer of X_T^(M).

    init=None starts from the N-quantiles of the weight N(mu_w, sigma_w^2).
    The restart grid matches the mean and variance of X_T^(M).
    """
    if init is None:
        if N is None:
            raise ParameterError("either init or N is required")
        init = gaussian_quantile_grid(N, w.mu_w, w.sigma_w)
    fallback = None
    if lm.order >= 2 and lm.variance > 0:
        fallback = (lm.mean, float(np.sqrt(lm.variance)))
    return quantize_law(
        _density(lm, w),
        init,
        tol=tol,
        max_iter=max_iter,
        units="log_price",
        fallback=fallback,
        meta={"M": lm.order, "date": lm.maturity},
    )
