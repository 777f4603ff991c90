import math

import numpy as np
import pytest

from src.error_lab import (
    ErrorStudy,
    PriceSpaceLaw,
    bound_check,
    density_negativity_scan,
    density_quasinorm_13,
    err2,
    lognormal_quasinorm_13,
    price_space_quantizer,
    quasinorm_13,
    run_error_study,
    run_error_study_async,
    truncation_error,
    zador_slope,
)
from src.errors import ParameterError
from src.hermite import TruncatedDensity
from src.pricing import OptionSpec

CALL = OptionSpec(strike=100.0, maturity=1.0)


@pytest.fixture
def bs_density(bs_moments):
    return TruncatedDensity.from_moments(bs_moments)


class TestPriceSpaceLaw:
    def test_lognormal_moments(self, bs_density, bs_weight):
        law = PriceSpaceLaw(bs_density)
        mu, s = bs_weight.mu_w, bs_weight.sigma_w
        assert law.mean == pytest.approx(math.exp(mu + 0.5 * s * s), rel=1e-10)
        assert law.variance == pytest.approx(math.exp(2 * mu + s * s) * (math.exp(s * s) - 1), rel=1e-8)

    def test_tail_mass(self, bs_density, bs_weight):
        law = PriceSpaceLaw(bs_density)
        l, _, _ = law.tail_moments(np.array([-np.inf, math.exp(bs_weight.mu_w), np.inf]))
        np.testing.assert_allclose(l, [1.0, 0.5, 0.0], atol=1e-12)

    def test_quantizer_in_price_units(self, bs_density):
        grid = price_space_quantizer(bs_density, 6)
        law = PriceSpaceLaw(bs_density)
        assert grid.units == "price"
        assert grid.weights.sum() == pytest.approx(1.0, abs=1e-10)
        assert float(grid.points @ grid.weights) == pytest.approx(law.mean, rel=1e-7)

    def test_quantizer_at_one_hundred_points(self, bs_density):
        grid = price_space_quantizer(bs_density, 100)
        law = PriceSpaceLaw(bs_density)
        assert np.all(np.diff(grid.points) > 0)
        assert grid.weights.sum() == pytest.approx(1.0, abs=1e-8)
        assert float(grid.points @ grid.weights) == pytest.approx(law.mean, rel=1e-6)
        assert grid.report()["lloyd_iterations"] >= 0


class TestQuasiNorm:
    def test_lognormal_closed_form(self, bs_density, bs_weight):
        expected = lognormal_quasinorm_13(bs_weight.mu_w, bs_weight.sigma_w)
        assert density_quasinorm_13(bs_density) == pytest.approx(expected, rel=1e-6)

    def test_panel_doubling_is_stable(self, bs_density):
        coarse = density_quasinorm_13(bs_density, panels=200)
        fine = density_quasinorm_13(bs_density, panels=400)
        assert coarse == pytest.approx(fine, rel=1e-6)

    def test_from_moments(self, bs_params, bs_weight, bs_moments):
        assert quasinorm_13(0, bs_params, 1.0, bs_weight, bs_moments) == pytest.approx(
            lognormal_quasinorm_13(bs_weight.mu_w, bs_weight.sigma_w), rel=1e-6
        )


class TestErrors:
    def test_err2_shrinks_with_n(self, bs_params, bs_weight, bs_moments):
        coarse = err2(0, 5, bs_params, 1.0, bs_weight, CALL, bs_moments)
        fine = err2(0, 40, bs_params, 1.0, bs_weight, CALL, bs_moments)
        assert fine < coarse

    def test_truncation_error_against_itself(self, table1_params, table1_weight):
        assert truncation_error(8, 8, table1_params, 1.0, table1_weight, CALL) == pytest.approx(0.0, abs=1e-14)

    def test_zador_slope(self):
        N = [10, 20, 40, 80]
        assert zador_slope(N, [3.0 / n ** 2 for n in N]) == pytest.approx(-1.0)


class TestStudy:
    def test_frame_and_bound(self, bs_params, bs_weight, bs_moments):
        study = run_error_study(0, [4, 8], bs_params, 1.0, bs_weight, CALL, bs_moments)
        frame = study.to_frame()
        assert list(frame.columns) == ["N", "err2", "N_err2", "s_error", "N_s_error", "bound"]
        assert frame["N_err2"].iloc[1] == pytest.approx(8 * study.err2_values[1])
        assert study.s_errors[1] < study.s_errors[0]
        assert study.bound == pytest.approx(math.sqrt(study.norm_13) / (2 * math.sqrt(3)))

    async def test_async_matches_sync(self, bs_params, bs_weight, bs_moments):
        sync = run_error_study(0, [3, 6], bs_params, 1.0, bs_weight, CALL, bs_moments)
        concurrent = await run_error_study_async(0, [3, 6], bs_params, 1.0, bs_weight, CALL, bs_moments)
        np.testing.assert_allclose(concurrent.err2_values, sync.err2_values, rtol=1e-12)
        np.testing.assert_allclose(concurrent.s_errors, sync.s_errors, rtol=1e-12)
        assert concurrent.series_price == pytest.approx(sync.series_price)

    def test_empty_ladder(self, bs_params, bs_weight, bs_moments):
        with pytest.raises(ParameterError):
            run_error_study(0, [], bs_params, 1.0, bs_weight, CALL, bs_moments)

    def test_order_beyond_the_supplied_moments(self, bs_params, bs_weight, bs_moments):
        with pytest.raises(ParameterError):
            run_error_study(2, [4], bs_params, 1.0, bs_weight, CALL, bs_moments)

    def test_bound_check(self):
        study = ErrorStudy(M=0, N_ladder=[10, 20, 40], s_errors=[0.1, 0.05, 0.025], norm_13=12.0)
        report = bound_check(study)
        assert report.threshold == pytest.approx(1.15 * study.bound)
        assert report.satisfied is (1.0 <= report.threshold)
        assert report.checked == [20, 40]

        tight = ErrorStudy(M=0, N_ladder=[10, 20], s_errors=[1.0, 1.0], norm_13=1.0)
        assert bound_check(tight).satisfied is False
        single = ErrorStudy(M=0, N_ladder=[10], s_errors=[0.1], norm_13=1.0)
        assert bound_check(single).satisfied is None

    def test_lognormal_bound_holds(self, bs_params, bs_weight, bs_moments):
        study = run_error_study(0, [20, 40], bs_params, 1.0, bs_weight, CALL, bs_moments)
        assert bound_check(study).satisfied


class TestNegativityScan:
    def test_gaussian_is_positive(self, bs_params, bs_weight, bs_moments):
        frame = density_negativity_scan([0], bs_params, 1.0, bs_weight, bs_moments)
        assert list(frame.columns) == ["M", "min_density", "negative_mass", "argmin"]
        assert frame["min_density"].iloc[0] > 0
        assert frame["negative_mass"].iloc[0] == 0.0

    def test_table1_scan(self, table1_params, table1_weight):
        frame = density_negativity_scan([4, 12], table1_params, 1.0, table1_weight)
        assert list(frame["M"]) == [4, 12]
        assert (frame["negative_mass"] >= 0).all()

    def test_empty_list(self, bs_params, bs_weight):
        with pytest.raises(ParameterError):
            density_negativity_scan([], bs_params, 1.0, bs_weight)
