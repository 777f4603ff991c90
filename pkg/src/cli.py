#!/usr/bin/env python3
"""
Command-line surface: `price`, `grids` and `error-study`.

Exit codes: 0 success, 2 configuration error, 3 numerical failure. Failures
are reported on stderr as a JSON object with a stable error code.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import logging
import math
import sys
from functools import partial
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from dotenv import load_dotenv

from src.config import RunConfig, configure_logging, load_run_config
from src.error_lab import bound_check, density_negativity_scan, run_error_study_async, zador_slope
from src.errors import EXIT_NUMERICAL, ConfigError, SvjqError
from src.hermite import TruncatedDensity
from src.model_core import HermiteMoments, hermite_moments, validate_params
from src.persistence import (
    ladder_rows,
    write_density_csv,
    write_frame,
    write_grid,
    write_json,
    write_ladder_csv,
    write_lattice,
    write_moments_csv,
)
from src.pricing import (
    PricingReport,
    black_scholes_price,
    ls_bermudan,
    mc_european,
    price_bermudan,
    price_european_grid,
    price_ladder_async,
    price_series,
)
from src.quantizer_poly import QuantGrid, newton_solve
from src.rmq_engine import RmqLattice, build_lattice

logger = logging.getLogger(__name__)


def parse_ladder(text: str) -> List[float]:
    """`lo:hi:step`, inclusive of hi."""
    try:
        lo, hi, step = (float(tok) for tok in text.split(":"))
    except ValueError as exc:
        raise ConfigError(f"ladder must look like lo:hi:step (got {text!r})", {"ladder": text}) from exc
    if step <= 0 or hi < lo or lo <= 0:
        raise ConfigError(f"invalid ladder {text!r}", {"ladder": text})
    count = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return [round(lo + i * step, 10) for i in range(count)]


class PricingSession:
    """Caches the strike-independent artefacts of one run configuration."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.params = cfg.params()
        self._moments: Optional[HermiteMoments] = None
        self._grid: Optional[QuantGrid] = None
        self._lattice: Optional[RmqLattice] = None

    @property
    def moments(self) -> HermiteMoments:
        if self._moments is None:
            w = self.cfg.weight()
            validate_params(self.params, self.cfg.T, w).raise_for_failures()
            self._moments = hermite_moments(self.params, self.cfg.T, w, self.cfg.M)
        return self._moments

    @property
    def density(self) -> TruncatedDensity:
        return TruncatedDensity.from_moments(self.moments)

    @property
    def grid(self) -> QuantGrid:
        if self._grid is None:
            self._grid = newton_solve(
                None, self.moments, self.moments.weight, tol=self.cfg.tol, max_iter=self.cfg.max_iter, N=self.cfg.N
            )
        return self._grid

    @property
    def lattice(self) -> RmqLattice:
        if self._lattice is None:
            self._lattice = build_lattice(self.params, self.cfg.euler_config())
        return self._lattice

    def prepare(self, engine: str) -> None:
        if engine in ("poly", "series"):
            _ = self.grid if engine == "poly" else self.moments
        elif engine == "rmq":
            _ = self.lattice

    def price(self, strike: float, engine: Optional[str] = None) -> PricingReport:
        engine = engine or self.cfg.engine
        spec = self.cfg.option_spec(strike)
        p, cfg = self.params, self.cfg
        if engine == "poly":
            return price_european_grid(self.grid, spec, p.r)
        if engine == "series":
            report = price_series(self.density, spec, p.r)
            if p.v0 == p.theta == p.v_max:
                report.diagnostics["black_scholes"] = black_scholes_price(
                    p.s0, strike, cfg.T, p.r, p.delta, math.sqrt(p.v_max), spec.kind
                )
            return report
        if engine == "rmq":
            if spec.exercise == "bermudan":
                return price_bermudan(self.lattice, spec, p.r)
            return price_european_grid(self.lattice.terminal_grid(), spec, p.r)
        if engine == "mc":
            return mc_european(p, spec, cfg.paths, cfg.steps, cfg.seed, cfg.scheme)
        if engine == "ls":
            return ls_bermudan(
                p, spec, cfg.paths, cfg.steps, cfg.basis_degree, cfg.seed, cfg.exercise_every, cfg.scheme
            )
        raise ConfigError(f"unknown engine {engine!r}")

    def benchmark_engine(self) -> str:
        if self.cfg.exercise == "bermudan":
            return "ls" if self.cfg.engine == "rmq" else "rmq"
        return "mc" if self.cfg.engine == "series" else "series"


def cmd_price(cfg: RunConfig, ladder: Optional[Sequence[float]] = None) -> Dict[str, str]:
    session = PricingSession(cfg)
    out = Path(cfg.out)
    session.prepare(cfg.engine)
    report = session.price(cfg.strike)
    written = {"report": str(write_json(report.model_dump(), out / "report.json"))}
    print(report.model_dump_json(indent=2))
    if ladder:
        bench_engine = session.benchmark_engine()
        session.prepare(bench_engine)
        quant = asyncio.run(price_ladder_async(ladder, session.price))
        bench = asyncio.run(price_ladder_async(ladder, partial(session.price, engine=bench_engine)))
        rows = ladder_rows(ladder, [b.price for b in bench], [q.price for q in quant])
        written["ladder"] = str(write_ladder_csv(rows, out / "ladder.csv"))
    return written


def cmd_grids(cfg: RunConfig) -> Dict[str, str]:
    if cfg.engine not in ("poly", "rmq"):
        raise ConfigError(f"grids needs engine poly or rmq (got {cfg.engine})", {"engine": cfg.engine})
    session = PricingSession(cfg)
    out = Path(cfg.out)
    if cfg.engine == "poly":
        csv_path, json_path = write_grid(session.grid, out, "poly_grid")
        return {
            "grid": str(csv_path),
            "report": str(json_path),
            "moments": str(write_moments_csv(session.moments, out / "hermite_moments.csv")),
            "density": str(write_density_csv(session.density, out / "density.csv")),
        }
    lattice = session.lattice
    return {
        "manifest": str(write_lattice(lattice, out / "lattice", cfg.model_dump())),
        "summary": str(write_json(lattice.summary(), out / "lattice_summary.json")),
    }


def cmd_error_study(cfg: RunConfig) -> Dict[str, str]:
    if cfg.engine != "poly":
        raise ConfigError(f"error-study needs engine poly (got {cfg.engine})", {"engine": cfg.engine})
    session = PricingSession(cfg)
    out = Path(cfg.out)
    p, w = session.params, cfg.weight()
    top = max([cfg.M, *cfg.M_list])
    validate_params(p, cfg.T, w).raise_for_failures()
    moments = hermite_moments(p, cfg.T, w, top)
    spec = cfg.option_spec()
    study = asyncio.run(run_error_study_async(cfg.M, cfg.N_ladder, p, cfg.T, w, spec, moments))
    bound = bound_check(study)
    scan = density_negativity_scan(cfg.M_list, p, cfg.T, w, moments)
    summary = {
        "M": cfg.M,
        "series_price": study.series_price,
        "norm_13": study.norm_13,
        "bound": study.bound,
        "bound_satisfied": bound.satisfied,
        "bound_threshold": bound.threshold,
        "zador_slope": zador_slope(study.N_ladder, study.distortions) if len(study.N_ladder) > 1 else None,
    }
    return {
        "study": str(write_frame(study.to_frame(), out / "error_study.csv")),
        "negativity": str(write_frame(scan, out / "negativity.csv")),
        "summary": str(write_json(summary, out / "error_summary.json")),
    }


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="Run config file (key = value)")
    common.add_argument("--engine", choices=["poly", "rmq", "series", "mc", "ls"], help="Override engine")
    common.add_argument("--out", help="Output directory")
    common.add_argument("--seed", type=int, help="Monte Carlo seed")
    common.add_argument("--verbose", action="store_true", help="DEBUG logging")

    parser = argparse.ArgumentParser(prog="svjq", description="SVJ quantization pricer")
    sub = parser.add_subparsers(dest="command", required=True)
    price = sub.add_parser("price", parents=[common], help="Price one option or a strike ladder")
    price.add_argument("--ladder", help="Strike ladder lo:hi:step")
    sub.add_parser("grids", parents=[common], help="Persist grids or the lattice")
    sub.add_parser("error-study", parents=[common], help="Run the error lab")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    try:
        cfg = load_run_config(args.config, {"engine": args.engine, "out": args.out, "seed": args.seed})
        if args.command == "price":
            ladder = parse_ladder(args.ladder) if getattr(args, "ladder", None) else None
            written = cmd_price(cfg, ladder)
        elif args.command == "grids":
            written = cmd_grids(cfg)
        else:
            written = cmd_error_study(cfg)
    except SvjqError as exc:
        logger.error("%s: %s", exc.code, exc)
        sys.stderr.write(json.dumps(exc.to_dict(), sort_keys=True, default=str) + "\n")
        return exc.exit_status
    except Exception as exc:  # noqa: BLE001
        logger.error("unexpected failure: %s", exc, exc_info=True)
        sys.stderr.write(json.dumps({"error": "internal_error", "message": str(exc), "context": {}}) + "\n")
        return EXIT_NUMERICAL
    logger.info("wrote %s", ", ".join(sorted(written.values())))
    return 0


if __name__ == "__main__":
    sys.exit(main())
