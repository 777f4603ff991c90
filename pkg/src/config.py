#!/usr/bin/env python3
"""
Run configuration and logging setup.

Config files use a flat `key = value` grammar with `#` comments, parsed by
python-dotenv and validated by a pydantic model that rejects unknown keys.
"""

from __future__ import annotations

import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from src.errors import ConfigError
from src.model_core import GaussianWeight, SvjParams, default_weight
from src.pricing import OptionSpec
from src.rmq_engine import EulerConfig

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def configure_logging(verbose: bool = False) -> None:
    level = "DEBUG" if verbose else os.getenv("SVJQ_LOG_LEVEL", "INFO").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), format=LOG_FORMAT, force=True)


def _int_list(value: Any) -> Any:
    if isinstance(value, str):
        return [int(tok) for tok in value.replace(";", ",").split(",") if tok.strip()]
    return value


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    # model
    kappa: float
    theta: float
    sigma: float
    rho: float
    v_min: float
    v_max: float
    r: float
    delta: float = 0.0
    v0: float
    s0: float
    T: float = Field(gt=0)
    M: int = Field(default=80, ge=0, description="Hermite truncation order")
    mu_w: Optional[float] = None
    sigma_w: Optional[float] = Field(default=None, gt=0)

    engine: Literal["poly", "rmq", "series", "mc", "ls"] = "poly"

    # option
    kind: Literal["call", "put"] = "call"
    exercise: Literal["european", "bermudan"] = "european"
    strike: float = Field(default=100.0, gt=0)
    exercise_every: int = Field(default=12, ge=1, description="Number of equally spaced exercise dates")

    # engine knobs
    N: int = Field(default=20, ge=1)
    N_V: int = Field(default=10, ge=1)
    N_S: int = Field(default=20, ge=1)
    L: int = Field(default=12, ge=1)
    paths: int = Field(default=100_000, ge=2)
    steps: int = Field(default=300, ge=1)
    seed: int = 0
    tol: float = Field(default=1e-9, gt=0)
    max_iter: int = Field(default=200, ge=1)
    basis_degree: int = Field(default=2, ge=0)
    drift: Literal["proportional", "literal"] = "proportional"
    scheme: Literal["log", "price"] = "log"

    # studies
    N_ladder: List[int] = Field(default_factory=lambda: [10, 20, 40, 80])
    M_list: List[int] = Field(default_factory=lambda: [20, 40, 80])

    out: str = "out"

    @field_validator("N_ladder", "M_list", mode="before")
    @classmethod
    def split_lists(cls, value: Any) -> Any:
        return _int_list(value)

    @model_validator(mode="after")
    def check_engine_knobs(self) -> "RunConfig":
        if self.exercise == "bermudan" and self.engine not in ("rmq", "ls"):
            raise ValueError(f"bermudan exercise needs engine rmq or ls (got {self.engine})")
        if self.engine == "ls" and self.exercise != "bermudan":
            raise ValueError("engine ls prices bermudan options only")
        if self.engine == "rmq" and self.exercise == "bermudan" and self.L % self.exercise_every:
            raise ValueError(f"exercise_every={self.exercise_every} must divide L={self.L}")
        if self.engine == "ls" and self.steps % self.exercise_every:
            raise ValueError(f"exercise_every={self.exercise_every} must divide steps={self.steps}")
        if not self.N_ladder:
            raise ValueError("N_ladder must not be empty")
        return self

    def params(self) -> SvjParams:
        return SvjParams.from_mapping(self.model_dump())

    def weight(self) -> GaussianWeight:
        default = default_weight(self.params(), self.T)
        return GaussianWeight(
            mu_w=default.mu_w if self.mu_w is None else self.mu_w,
            sigma_w=default.sigma_w if self.sigma_w is None else self.sigma_w,
        )

    def exercise_dates(self) -> Optional[List[float]]:
        if self.exercise != "bermudan":
            return None
        return [self.T * k / self.exercise_every for k in range(1, self.exercise_every + 1)]

    def option_spec(self, strike: Optional[float] = None) -> OptionSpec:
        return OptionSpec(
            kind=self.kind,
            exercise=self.exercise,
            strike=self.strike if strike is None else strike,
            maturity=self.T,
            exercise_dates=self.exercise_dates(),
        )

    def euler_config(self) -> EulerConfig:
        return EulerConfig(
            L=self.L, T=self.T, N_V=self.N_V, N_S=self.N_S, drift=self.drift, tol=self.tol, max_iter=self.max_iter
        )

    def with_overrides(self, **changes: Any) -> "RunConfig":
        data = self.model_dump()
        data.update({k: v for k, v in changes.items() if v is not None})
        return build_run_config(data)


def build_run_config(values: Mapping[str, Any]) -> RunConfig:
    try:
        return RunConfig(**values)
    except ValidationError as exc:
        problems = [
            {"field": ".".join(str(x) for x in err["loc"]), "message": err["msg"]} for err in exc.errors()
        ]
        raise ConfigError(f"invalid run config ({len(problems)} problem(s))", {"problems": problems}) from exc


def load_run_config(path: str, overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """Parse a `key = value` file and apply non-None overrides."""
    config_path = Path(path)
    if not config_path.is_file():
        raise ConfigError(f"config file not found: {path}", {"path": str(path)})
    raw: Dict[str, Any] = {k: v for k, v in dotenv_values(config_path).items()}
    empty = [k for k, v in raw.items() if v is None or v == ""]
    if empty:
        raise ConfigError(f"keys without values: {', '.join(empty)}", {"keys": empty})
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    logger.info("loaded run config %s (%d keys)", config_path, len(raw))
    return build_run_config(raw)
