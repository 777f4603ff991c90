#!/usr/bin/env python3
"""
Recursive marginal quantization of the Euler scheme of (V, S).

Each date gets a variance grid and a price grid, solved by Newton on the
distortion of the Gaussian-mixture marginal. Joint weights on the product grid
and the date-to-date transition tensors come from the bivariate Gaussian law
of one Euler step.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import ndtr

from src.errors import ConvergenceError, NumericalError, ParameterError
from src.model_core import SvjParams, q_of_v, validate_params
from src.quantizer_poly import (
    NEWTON_MAX_ITER,
    NEWTON_TOL,
    QuantGrid,
    cell_edges,
    cell_moments,
    gaussian_quantile_grid,
    quantize_law,
)

logger = logging.getLogger(__name__)

DRIFTS = ("proportional", "literal")
GL_ORDER = 16
# outer integration panels in standardised variance units
PANEL_WIDTH = 1.0
Z_CUTOFF = 8.5

_GL_NODES, _GL_WEIGHTS = leggauss(GL_ORDER)


@dataclass(frozen=True)
class EulerConfig:
    L: int
    T: float
    N_V: int
    N_S: int
    drift: str = "proportional"
    tol: float = NEWTON_TOL
    max_iter: int = NEWTON_MAX_ITER

    def __post_init__(self):
        if self.L < 1 or self.N_V < 1 or self.N_S < 1:
            raise ParameterError(
                f"L, N_V and N_S must be >= 1 (got L={self.L}, N_V={self.N_V}, N_S={self.N_S})"
            )
        if self.T <= 0:
            raise ParameterError(f"T must be > 0 (got {self.T})")
        if self.drift not in DRIFTS:
            raise ParameterError(f"drift must be one of {DRIFTS} (got {self.drift!r})")

    @property
    def Delta(self) -> float:
        return self.T / self.L

    def dates(self) -> np.ndarray:
        return np.arange(self.L + 1) * self.Delta


def clamp_variance(p: SvjParams, v):
    return np.clip(v, p.v_min, p.v_max)


def drift_price(p: SvjParams, s, Delta: float, drift: str = "proportional"):
    if drift == "literal":
        return s + (p.r - p.delta) * Delta
    return s * (1.0 + (p.r - p.delta) * Delta)


def euler_conditional_law(
    p: SvjParams,
    Delta: float,
    state: Tuple[float, float],
    drift: str = "proportional",
) -> Tuple[np.ndarray, np.ndarray]:
    """Mean (v, s) and covariance of one Euler step from state (v, s)."""
    v, s = state
    if s <= 0:
        raise ParameterError(f"price state must be > 0 (got {s})", {"state": [v, s]})
    v = float(clamp_variance(p, v))
    q = q_of_v(p, v)
    mean = np.array([v + p.kappa * (p.theta - v) * Delta, drift_price(p, s, Delta, drift)])
    cross = p.rho * p.sigma * s * q
    cov = Delta * np.array([[p.sigma ** 2 * q, cross], [cross, s * s * v]])
    if cov[1, 1] <= 0 or cov[0, 0] < 0:
        raise NumericalError("non-positive conditional variance", {"state": [v, s]})
    return mean, cov


@dataclass(frozen=True)
class GaussianMixture:
    """Univariate mixture; zero-variance components are point masses."""

    means: np.ndarray
    variances: np.ndarray
    weights: np.ndarray

    @classmethod
    def build(cls, means, variances, weights) -> "GaussianMixture":
        means = np.asarray(means, dtype=float).ravel()
        variances = np.maximum(np.asarray(variances, dtype=float).ravel(), 0.0)
        weights = np.asarray(weights, dtype=float).ravel()
        keep = weights > 0
        return cls(means[keep], variances[keep], weights[keep])

    @property
    def sds(self) -> np.ndarray:
        return np.sqrt(self.variances)

    @property
    def total(self) -> float:
        return float(self.weights.sum())

    @property
    def mean(self) -> float:
        return float(np.dot(self.weights, self.means) / self.total)

    @property
    def variance(self) -> float:
        second = np.dot(self.weights, self.variances + self.means ** 2) / self.total
        return float(second - self.mean ** 2)

    @property
    def degenerate(self) -> bool:
        return bool(np.all(self.variances == 0))

    def pdf(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        live = self.variances > 0
        if not np.any(live):
            return np.zeros_like(x)
        m, s, w = self.means[live], self.sds[live], self.weights[live]
        z = (x[:, None] - m[None, :]) / s[None, :]
        return (np.exp(-0.5 * z * z) / (s * math.sqrt(2.0 * math.pi))) @ w

    def tail_moments(self, edges) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """int_K^inf y^k f(y) dy, k = 0, 1, 2, per edge."""
        K = np.atleast_1d(np.asarray(edges, dtype=float))[:, None]
        m, s = self.means[None, :], self.sds[None, :]
        finite = np.isfinite(K)
        live = s > 0
        safe_k = np.where(finite, K, 0.0)
        z = np.where(live, (safe_k - m) / np.where(live, s, 1.0), 0.0)
        upper = np.where(live, ndtr(-z), (m > safe_k).astype(float))
        upper = np.where(finite, upper, np.where(K < 0, 1.0, 0.0))
        dens = np.where(live & finite, np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi), 0.0)
        l = upper @ self.weights
        h = (m * upper + s * dens) @ self.weights
        q = ((m * m + s * s) * upper + s * dens * (m + safe_k)) @ self.weights
        return l, h, q

    def gradient(self, points) -> np.ndarray:
        """d/dx_j of the mixture distortion: -2 int_{C_j} (y - x_j) f(y) dy."""
        points = np.asarray(points, dtype=float)
        mass, first, _ = cell_moments(points, self)
        return -2.0 * (first - points * mass)

    def distortion(self, points) -> float:
        points = np.asarray(points, dtype=float)
        mass, first, second = cell_moments(points, self)
        return float(np.sum(second - 2.0 * points * first + points * points * mass))


@dataclass
class RmqLattice:
    params: SvjParams
    config: EulerConfig
    v_grids: List[QuantGrid] = field(default_factory=list)
    s_grids: List[QuantGrid] = field(default_factory=list)
    joint_weights: List[np.ndarray] = field(default_factory=list)
    transitions: List[np.ndarray] = field(default_factory=list)
    row_defects: List[float] = field(default_factory=list)

    @property
    def L(self) -> int:
        return self.config.L

    @property
    def Delta(self) -> float:
        return self.config.Delta

    def terminal_grid(self) -> QuantGrid:
        return self.s_grids[-1]

    def summary(self) -> Dict[str, Any]:
        return {
            "L": self.L,
            "Delta": self.Delta,
            "N_V": self.config.N_V,
            "N_S": self.config.N_S,
            "drift": self.config.drift,
            "grid_sizes": [[g.N, h.N] for g, h in zip(self.v_grids, self.s_grids)],
            "max_row_defect": max(self.row_defects) if self.row_defects else 0.0,
        }


def marginal_mixture(lattice: RmqLattice, k: int, which: str) -> GaussianMixture:
    """Mixture law of the date-(k+1) V or S marginal given the date-k lattice."""
    p, Delta, drift = lattice.params, lattice.Delta, lattice.config.drift
    v_grid = lattice.v_grids[k]
    v = clamp_variance(p, v_grid.points)
    q = np.asarray(q_of_v(p, v), dtype=float).reshape(v.shape)
    if which == "V":
        means = v + p.kappa * (p.theta - v) * Delta
        return GaussianMixture.build(means, Delta * p.sigma ** 2 * q, v_grid.weights)
    if which == "S":
        s = lattice.s_grids[k].points
        means = np.broadcast_to(drift_price(p, s, Delta, drift)[None, :], (v.size, s.size))
        variances = Delta * np.outer(v, s * s)
        return GaussianMixture.build(means, variances, lattice.joint_weights[k])
    raise ParameterError(f"which must be 'V' or 'S' (got {which!r})")


def _degenerate_grid(mixture: GaussianMixture, units: str) -> QuantGrid:
    points, inverse = np.unique(mixture.means, return_inverse=True)
    weights = np.bincount(inverse, weights=mixture.weights, minlength=points.size) / mixture.total
    return QuantGrid(points=points, weights=weights, units=units, iterations=0, residual=0.0, distortion=0.0)


def rmq_newton_step(
    mixture: GaussianMixture,
    init,
    tol: float = NEWTON_TOL,
    max_iter: int = NEWTON_MAX_ITER,
    units: str = "price",
) -> QuantGrid:
    """Stationary grid for a Gaussian mixture, same damped Newton as the Hermite quantizer."""
    if mixture.degenerate:
        return _degenerate_grid(mixture, units)
    init = np.sort(np.asarray(init, dtype=float))
    fallback = (mixture.mean, math.sqrt(max(mixture.variance, 0.0)))
    if init.size > 1 and np.any(np.diff(init) <= 0):
        init = gaussian_quantile_grid(init.size, *fallback)
    return quantize_law(mixture, init, tol=tol, max_iter=max_iter, units=units, fallback=fallback)


def _warm_start(previous: QuantGrid, mixture: GaussianMixture, n: int) -> np.ndarray:
    if previous.N < n or mixture.degenerate:
        return gaussian_quantile_grid(n, mixture.mean, math.sqrt(max(mixture.variance, 1e-300)))
    shift = mixture.mean - float(np.dot(previous.points, previous.weights))
    return previous.points + shift


def _clamp_variance_grid(p: SvjParams, grid: QuantGrid, mixture: GaussianMixture) -> QuantGrid:
    clamped = np.unique(clamp_variance(p, grid.points))
    if clamped.size == grid.N and np.allclose(clamped, grid.points, rtol=0.0, atol=0.0):
        return grid
    mass = cell_moments(clamped, mixture)[0] if clamped.size > 1 else np.ones(1)
    logger.debug("variance grid clamped to [%g, %g]: %d -> %d points", p.v_min, p.v_max, grid.N, clamped.size)
    return QuantGrid(
        points=clamped,
        weights=mass / mass.sum(),
        units=grid.units,
        meta={**grid.meta, "clamped": True},
        iterations=grid.iterations,
        residual=grid.residual,
        distortion=mixture.distortion(clamped),
    )


def _transition_row(
    p: SvjParams,
    Delta: float,
    drift: str,
    state: Tuple[float, float],
    v_edges: np.ndarray,
    s_edges: np.ndarray,
) -> np.ndarray:
    """Masses of every target rectangle C_V x C_S under one Euler step.

    Conditional factorisation: outer integral over the V cell in standardised
    units by composite Gauss-Legendre, inner conditional Gaussian interval in S.
    """
    mean, cov = euler_conditional_law(p, Delta, state, drift)
    n_v, n_s = v_edges.size - 1, s_edges.size - 1
    a, c, b = cov[0, 0], cov[0, 1], cov[1, 1]

    if a <= 0.0:
        row = np.zeros((n_v, n_s))
        cell = int(np.searchsorted(v_edges[1:-1], mean[0], side="right"))
        row[cell] = np.diff(ndtr((s_edges - mean[1]) / math.sqrt(b)))
        return row

    sd_v = math.sqrt(a)
    cond_sd = math.sqrt(max(b - c * c / a, 0.0))
    z_edges = np.clip((v_edges - mean[0]) / sd_v, -Z_CUTOFF, Z_CUTOFF)
    nodes: List[np.ndarray] = []
    weights: List[np.ndarray] = []
    cells: List[np.ndarray] = []
    for i in range(n_v):
        lo, hi = z_edges[i], z_edges[i + 1]
        if hi <= lo:
            continue
        panels = max(1, int(math.ceil((hi - lo) / PANEL_WIDTH)))
        bounds = np.linspace(lo, hi, panels + 1)
        half = 0.5 * np.diff(bounds)[:, None]
        z = (0.5 * (bounds[1:] + bounds[:-1]))[:, None] + half * _GL_NODES[None, :]
        nodes.append(z.ravel())
        weights.append((half * _GL_WEIGHTS[None, :]).ravel())
        cells.append(np.full(z.size, i))
    row = np.zeros((n_v, n_s))
    if not nodes:
        return row

    z = np.concatenate(nodes)
    omega = np.concatenate(weights) * np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    cell = np.concatenate(cells)
    cond_mean = mean[1] + (c / sd_v) * z
    if cond_sd > 0:
        cdf = ndtr((s_edges[None, :] - cond_mean[:, None]) / cond_sd)
    else:
        cdf = (s_edges[None, :] >= cond_mean[:, None]).astype(float)
    masses = np.diff(cdf, axis=1) * omega[:, None]
    for j in range(n_s):
        row[:, j] = np.bincount(cell, weights=masses[:, j], minlength=n_v)
    if not np.all(np.isfinite(row)):
        raise NumericalError("non-finite rectangle probability", {"state": list(state)})
    return row


def joint_and_transitions(lattice: RmqLattice, k: int) -> Tuple[np.ndarray, np.ndarray, float]:
    """Transition tensor (i, j) -> (i', j') from date k to k+1, and joint weights at k+1."""
    p, Delta, drift = lattice.params, lattice.Delta, lattice.config.drift
    v_src, s_src = lattice.v_grids[k].points, lattice.s_grids[k].points
    v_edges = cell_edges(lattice.v_grids[k + 1].points)
    s_edges = cell_edges(lattice.s_grids[k + 1].points)
    tensor = np.zeros((v_src.size, s_src.size, v_edges.size - 1, s_edges.size - 1))
    defect = 0.0
    for i, v in enumerate(v_src):
        for j, s in enumerate(s_src):
            try:
                row = _transition_row(p, Delta, drift, (v, s), v_edges, s_edges)
            except NumericalError as exc:
                raise NumericalError(str(exc), {**exc.context, "step": k, "atom": [i, j]}) from exc
            total = row.sum()
            defect = max(defect, abs(total - 1.0))
            tensor[i, j] = row / total
    joint = np.einsum("ij,ijab->ab", lattice.joint_weights[k], tensor)
    logger.info("date %d: transitions built, max pre-normalisation defect %.2e", k + 1, defect)
    return joint, tensor, defect


def build_lattice(p: SvjParams, cfg: EulerConfig) -> RmqLattice:
    """Grow the lattice date by date from the degenerate pair (v0, S0)."""
    validate_params(p, cfg.T).raise_for_failures()
    lattice = RmqLattice(params=p, config=cfg)
    lattice.v_grids.append(QuantGrid(np.array([p.v0]), np.ones(1), units="variance", meta={"date": 0.0}))
    lattice.s_grids.append(QuantGrid(np.array([p.s0]), np.ones(1), units="price", meta={"date": 0.0}))
    lattice.joint_weights.append(np.ones((1, 1)))

    for k in range(cfg.L):
        date = (k + 1) * cfg.Delta
        try:
            v_mix = marginal_mixture(lattice, k, "V")
            v_grid = rmq_newton_step(
                v_mix, _warm_start(lattice.v_grids[k], v_mix, cfg.N_V), cfg.tol, cfg.max_iter, "variance"
            )
            v_grid = _clamp_variance_grid(p, v_grid, v_mix)
            v_grid.meta["date"] = date
            lattice.v_grids.append(v_grid)

            s_mix = marginal_mixture(lattice, k, "S")
            s_grid = rmq_newton_step(
                s_mix, _warm_start(lattice.s_grids[k], s_mix, cfg.N_S), cfg.tol, cfg.max_iter, "price"
            )
            s_grid.meta["date"] = date
            lattice.s_grids.append(s_grid)

            joint, tensor, defect = joint_and_transitions(lattice, k)
        except ConvergenceError as exc:
            raise ConvergenceError(
                f"lattice construction failed at step {k}: {exc}", {**exc.context, "step": k}
            ) from exc
        lattice.joint_weights.append(joint)
        lattice.transitions.append(tensor)
        lattice.row_defects.append(defect)
        logger.info(
            "date %d/%d: N_V=%d N_S=%d E[S]=%.6f", k + 1, cfg.L, v_grid.N, s_grid.N, s_grid.expectation(lambda s: s)
        )
    return lattice


def lattice_from_parts(
    p: SvjParams,
    cfg: EulerConfig,
    v_grids: List[QuantGrid],
    s_grids: List[QuantGrid],
    joint_weights: List[np.ndarray],
    transitions: List[np.ndarray],
    row_defects: Optional[List[float]] = None,
) -> RmqLattice:
    if len(v_grids) != cfg.L + 1 or len(s_grids) != cfg.L + 1 or len(transitions) != cfg.L:
        raise ParameterError("lattice parts do not match L", {"L": cfg.L})
    return RmqLattice(p, cfg, list(v_grids), list(s_grids), list(joint_weights), list(transitions), list(row_defects or []))
