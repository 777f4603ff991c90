#!/usr/bin/env python3
"""
Option pricing on quantization outputs plus Monte Carlo oracles.

European prices come from a single grid (log-price or price units). Bermudan
prices come from backward induction on the recursive-marginal lattice. Euler
Monte Carlo and Longstaff-Schwartz give the benchmarks.
"""

from __future__ import annotations

import asyncio
import logging
import math
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Literal, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.stats import norm

from src.errors import ParameterError
from src.hermite import TruncatedDensity, price_european_series
from src.model_core import SvjParams, q_of_v
from src.quantizer_poly import QuantGrid
from src.rmq_engine import RmqLattice

logger = logging.getLogger(__name__)

MC_CHUNK = 100_000
SCHEMES = ("log", "price")


class OptionSpec(BaseModel):
    """Contract terms; exercise_dates are year fractions (Bermudan only)."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["call", "put"] = Field(default="call", description="Payoff type")
    exercise: Literal["european", "bermudan"] = Field(default="european", description="Exercise style")
    strike: float = Field(gt=0, description="Strike in currency units")
    maturity: float = Field(gt=0, description="Maturity in years")
    exercise_dates: Optional[List[float]] = Field(
        default=None, description="Bermudan exercise dates; defaults to every lattice date"
    )

    @model_validator(mode="after")
    def check_dates(self) -> "OptionSpec":
        if self.exercise_dates:
            dates = sorted(self.exercise_dates)
            if dates[0] <= 0 or dates[-1] > self.maturity * (1 + 1e-12):
                raise ValueError("exercise dates must lie in (0, maturity]")
        return self

    def payoff(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "call":
            return np.maximum(s - self.strike, 0.0)
        return np.maximum(self.strike - s, 0.0)


class PricingReport(BaseModel):
    price: float = Field(description="Discounted price")
    method: Literal["series", "poly_quant", "rmq", "mc", "longstaff_schwartz", "black_scholes"]
    strike: Optional[float] = None
    kind: Optional[str] = None
    standard_error: Optional[float] = Field(default=None, description="Monte Carlo standard error")
    diagnostics: Dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def mc_needs_error(self) -> "PricingReport":
        if self.method in ("mc", "longstaff_schwartz") and self.standard_error is None:
            raise ValueError("Monte Carlo reports carry a standard error")
        return self


def black_scholes_price(s0: float, K: float, T: float, r: float, delta: float, vol: float, kind: str = "call") -> float:
    sd = vol * math.sqrt(T)
    d1 = (math.log(s0 / K) + (r - delta) * T + 0.5 * sd * sd) / sd
    d2 = d1 - sd
    if kind == "call":
        return s0 * math.exp(-delta * T) * norm.cdf(d1) - K * math.exp(-r * T) * norm.cdf(d2)
    return K * math.exp(-r * T) * norm.cdf(-d2) - s0 * math.exp(-delta * T) * norm.cdf(-d1)


def parity_gap(call: float, put: float, forward: float, K: float, r: float, T: float) -> float:
    """C - P - e^{-rT}(F - K); zero for a consistent model."""
    return call - put - math.exp(-r * T) * (forward - K)


def price_series(d: TruncatedDensity, spec: OptionSpec, r: float) -> PricingReport:
    price = price_european_series(d, spec.strike, spec.maturity, r, spec.kind)
    return PricingReport(
        price=price, method="series", strike=spec.strike, kind=spec.kind, diagnostics={"M": d.order}
    )


def price_european_grid(grid: QuantGrid, spec: OptionSpec, r: float) -> PricingReport:
    """e^{-rT} sum_i payoff(x_i) p_i; log-price grids are exponentiated first."""
    if spec.exercise != "european":
        raise ParameterError("price_european_grid needs a European option")
    if grid.units == "log_price":
        prices, method = np.exp(grid.points), "poly_quant"
    elif grid.units == "price":
        prices, method = grid.points, "rmq"
    else:
        raise ParameterError(f"cannot price a payoff on a {grid.units!r} grid", {"units": grid.units})
    value = math.exp(-r * spec.maturity) * float(np.dot(spec.payoff(prices), grid.weights))
    return PricingReport(
        price=value,
        method=method,
        strike=spec.strike,
        kind=spec.kind,
        diagnostics={"N": grid.N, "residual": grid.residual, "mass": float(grid.weights.sum())},
    )


def exercise_indices(lattice: RmqLattice, spec: OptionSpec) -> List[int]:
    dates = lattice.config.dates()
    if not math.isclose(spec.maturity, dates[-1], rel_tol=1e-9):
        raise ParameterError(
            f"spec maturity {spec.maturity} differs from lattice horizon {dates[-1]}",
            {"maturity": spec.maturity},
        )
    if not spec.exercise_dates:
        return list(range(1, lattice.L + 1))
    indices = []
    for t in spec.exercise_dates:
        hits = np.flatnonzero(np.isclose(dates[1:], t, rtol=1e-9, atol=1e-12))
        if hits.size == 0:
            raise ParameterError(f"exercise date {t} is not a lattice date", {"date": t})
        indices.append(int(hits[0]) + 1)
    return sorted(set(indices))


def price_bermudan(lattice: RmqLattice, spec: OptionSpec, r: float) -> PricingReport:
    """Backward induction through the transition tensors."""
    if len(lattice.transitions) != lattice.L:
        raise ParameterError("lattice is missing transitions", {"have": len(lattice.transitions), "L": lattice.L})
    exercisable = set(exercise_indices(lattice, spec))
    disc = math.exp(-r * lattice.Delta)
    terminal = lattice.s_grids[-1].points
    value = np.broadcast_to(spec.payoff(terminal)[None, :], (lattice.v_grids[-1].N, terminal.size)).copy()
    exercised = 0
    for k in range(lattice.L - 1, -1, -1):
        value = disc * np.einsum("ijab,ab->ij", lattice.transitions[k], value)
        if k in exercisable:
            intrinsic = spec.payoff(lattice.s_grids[k].points)[None, :]
            exercised += int(np.count_nonzero(intrinsic > value))
            value = np.maximum(value, intrinsic)
    price = float(np.sum(lattice.joint_weights[0] * value))
    return PricingReport(
        price=price,
        method="rmq",
        strike=spec.strike,
        kind=spec.kind,
        diagnostics={
            "L": lattice.L,
            "N_V": lattice.config.N_V,
            "N_S": lattice.config.N_S,
            "exercise_dates": sorted(exercisable),
            "exercise_atoms": exercised,
        },
    )


@dataclass
class PathSample:
    times: np.ndarray
    s: np.ndarray
    v: np.ndarray

    @property
    def terminal(self) -> np.ndarray:
        return self.s[:, -1]


def _euler_chunk(
    p: SvjParams,
    dt: float,
    steps: int,
    n: int,
    rng: np.random.Generator,
    monitor: np.ndarray,
    scheme: str,
) -> tuple:
    v = np.full(n, p.v0)
    state = np.full(n, p.x0 if scheme == "log" else p.s0)
    s_out = np.empty((n, monitor.size))
    v_out = np.empty((n, monitor.size))
    slot = {int(m): c for c, m in enumerate(monitor)}
    sq = math.sqrt(dt)
    for k in range(1, steps + 1):
        z1 = rng.standard_normal(n)
        z2 = rng.standard_normal(n)
        q = np.maximum(q_of_v(p, v), 0.0)
        shock = p.rho * np.sqrt(q) * z1 + np.sqrt(np.maximum(v - p.rho ** 2 * q, 0.0)) * z2
        if scheme == "log":
            state = state + (p.r - p.delta - 0.5 * v) * dt + shock * sq
        else:
            state = state * (1.0 + (p.r - p.delta) * dt + shock * sq)
        v = np.clip(v + p.kappa * (p.theta - v) * dt + p.sigma * np.sqrt(q) * sq * z1, p.v_min, p.v_max)
        if k in slot:
            s_out[:, slot[k]] = np.exp(state) if scheme == "log" else state
            v_out[:, slot[k]] = v
    return s_out, v_out


def simulate_paths(
    p: SvjParams,
    T: float,
    steps: int,
    paths: int,
    seed: int = 0,
    scheme: str = "log",
    monitor: Optional[Sequence[int]] = None,
    chunk_size: int = MC_CHUNK,
) -> PathSample:
    """Euler paths of (S, V) recorded at the monitor step indices (default: maturity).

    Variance is clamped to [v_min, v_max] after every step. Each chunk draws
    from its own stream spawned from SeedSequence(seed).
    """
    if scheme not in SCHEMES:
        raise ParameterError(f"scheme must be one of {SCHEMES} (got {scheme!r})")
    if steps < 1 or paths < 1:
        raise ParameterError("steps and paths must be >= 1")
    monitor_idx = np.array([steps] if monitor is None else sorted(monitor), dtype=int)
    if monitor_idx[0] < 1 or monitor_idx[-1] > steps:
        raise ParameterError("monitor indices must lie in [1, steps]")
    dt = T / steps
    n_chunks = max(1, math.ceil(paths / chunk_size))
    streams = np.random.SeedSequence(seed).spawn(n_chunks)
    s_parts, v_parts = [], []
    for c, stream in enumerate(streams):
        n = min(chunk_size, paths - c * chunk_size)
        s_chunk, v_chunk = _euler_chunk(p, dt, steps, n, np.random.default_rng(stream), monitor_idx, scheme)
        s_parts.append(s_chunk)
        v_parts.append(v_chunk)
    return PathSample(times=monitor_idx * dt, s=np.vstack(s_parts), v=np.vstack(v_parts))


def mc_expectation(values: np.ndarray) -> tuple:
    values = np.asarray(values, dtype=float)
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(values.size))


def mc_european(
    p: SvjParams,
    spec: OptionSpec,
    paths: int,
    steps: int,
    seed: int = 0,
    scheme: str = "log",
) -> PricingReport:
    sample = simulate_paths(p, spec.maturity, steps, paths, seed, scheme)
    disc = math.exp(-p.r * spec.maturity)
    mean, se = mc_expectation(disc * spec.payoff(sample.terminal))
    logger.info("MC %s K=%.4g: %.6f +/- %.6f (%d paths)", spec.kind, spec.strike, mean, se, paths)
    return PricingReport(
        price=mean,
        method="mc",
        strike=spec.strike,
        kind=spec.kind,
        standard_error=se,
        diagnostics={"paths": paths, "steps": steps, "seed": seed, "scheme": scheme},
    )


def regression_basis(s: np.ndarray, v: np.ndarray, degree: int) -> np.ndarray:
    """Monomials s^a v^b with a + b <= degree."""
    cols = [s ** (d - b) * v ** b for d in range(degree + 1) for b in range(d + 1)]
    return np.column_stack(cols)


def _continuation(y: np.ndarray, s: np.ndarray, v: np.ndarray, degree: int) -> tuple:
    for deg in range(degree, -1, -1):
        design = regression_basis(s, v, deg)
        if design.shape[0] > design.shape[1]:
            coef, _res, rank, _sv = np.linalg.lstsq(design, y, rcond=None)
            if rank == design.shape[1]:
                return design @ coef, deg
        logger.warning("regression basis of degree %d is rank-deficient; falling back", deg)
    return np.full_like(y, y.mean()), 0


def ls_bermudan(
    p: SvjParams,
    spec: OptionSpec,
    paths: int,
    steps: int,
    basis_degree: int = 2,
    seed: int = 0,
    exercise_every: int = 12,
    scheme: str = "log",
) -> PricingReport:
    """Longstaff-Schwartz with regression on in-the-money paths.

    Without explicit exercise_dates the schedule is exercise_every equally
    spaced dates ending at maturity.
    """
    T = spec.maturity
    dates = spec.exercise_dates or list(np.arange(1, exercise_every + 1) * T / exercise_every)
    dt = T / steps
    monitor = np.rint(np.asarray(sorted(dates)) / dt).astype(int)
    if not np.allclose(monitor * dt, sorted(dates), atol=1e-9 * max(T, 1.0)):
        raise ParameterError("exercise dates must fall on simulation steps", {"steps": steps})
    sample = simulate_paths(p, T, steps, paths, seed, scheme, monitor=monitor)
    times = sample.times
    s_scale, v_scale = spec.strike, p.v_max

    cash = spec.payoff(sample.s[:, -1])
    degrees_used = []
    for k in range(times.size - 2, -1, -1):
        cash = cash * math.exp(-p.r * (times[k + 1] - times[k]))
        intrinsic = spec.payoff(sample.s[:, k])
        itm = intrinsic > 0
        if not np.any(itm):
            continue
        fitted, deg = _continuation(
            cash[itm], sample.s[itm, k] / s_scale, sample.v[itm, k] / v_scale, basis_degree
        )
        degrees_used.append(deg)
        exercise = np.zeros_like(itm)
        exercise[itm] = intrinsic[itm] > fitted
        cash = np.where(exercise, intrinsic, cash)
    cash = cash * math.exp(-p.r * times[0])
    mean, se = mc_expectation(cash)
    logger.info("Longstaff-Schwartz %s K=%.4g: %.6f +/- %.6f", spec.kind, spec.strike, mean, se)
    return PricingReport(
        price=mean,
        method="longstaff_schwartz",
        strike=spec.strike,
        kind=spec.kind,
        standard_error=se,
        diagnostics={
            "paths": paths,
            "steps": steps,
            "seed": seed,
            "exercise_dates": len(times),
            "basis_degree": basis_degree,
            "min_degree_used": min(degrees_used) if degrees_used else basis_degree,
        },
    )


async def price_ladder_async(
    strikes: Sequence[float],
    price_one: Callable[[float], PricingReport],
) -> List[PricingReport]:
    """Price independent strikes concurrently; results keep the input order."""
    tasks = [asyncio.to_thread(price_one, float(K)) for K in strikes]
    return list(await asyncio.gather(*tasks))
