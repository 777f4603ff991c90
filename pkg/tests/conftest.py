import math
from pathlib import Path

import numpy as np
import pytest

from src.model_core import GaussianWeight, HermiteMoments, SvjParams, default_weight

REPO_ROOT = Path(__file__).resolve().parents[1]
CONFIG_DIR = REPO_ROOT / "config"

TABLE1 = dict(
    kappa=1.7, theta=0.06, sigma=0.5, rho=-0.5, v_min=0.01, v_max=1.0, r=0.04, delta=0.0, v0=0.1, s0=100.0
)
# V is pinned at v_max: the log-price is N(x0 + (r - v_max/2) T, v_max T)
BS_LIMIT = dict(
    kappa=1.7, theta=0.04, sigma=0.5, rho=-0.5, v_min=0.01, v_max=0.04, r=0.04, delta=0.0, v0=0.04, s0=100.0
)


@pytest.fixture
def table1_params() -> SvjParams:
    return SvjParams(**TABLE1)


@pytest.fixture
def table1_weight(table1_params) -> GaussianWeight:
    return default_weight(table1_params, 1.0)


@pytest.fixture
def bs_params() -> SvjParams:
    return SvjParams(**BS_LIMIT)


@pytest.fixture
def bs_weight(bs_params) -> GaussianWeight:
    mu = bs_params.x0 + (bs_params.r - 0.5 * bs_params.v_max)
    return GaussianWeight(mu_w=mu, sigma_w=math.sqrt(bs_params.v_max))


@pytest.fixture
def bs_moments(bs_weight) -> HermiteMoments:
    """Order-0 moments: the truncated density is the weight itself."""
    return HermiteMoments(order=0, values=np.array([1.0]), weight=bs_weight, maturity=1.0)


@pytest.fixture
def config_text():
    def render(**overrides) -> str:
        values = {**BS_LIMIT, "T": 1.0, "engine": "series", "M": 0, "sigma_w": 0.2}
        values.update(overrides)
        return "\n".join(f"{k} = {v}" for k, v in values.items()) + "\n"

    return render
