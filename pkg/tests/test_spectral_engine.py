"""
谱方法密度引擎测试
"""

import numpy as np
import pandas as pd
import pytest
from scipy.stats import norm

from returns_model import (DomainError, GridSpec, ReturnModel, convolution_spectrum, student_density,
                           truncated_variance)
from spectral_engine import (SQRT_2PI, DensityCache, EngineSettings, HorizonUnavailableError, build_density,
                             build_density_from_spectrum, density_moment, export_density_csv,
                             gaussian_spectrum)

SMALL = 2 ** 14


class TestGaussianRoundTrip:
    """正态谱的往返精度"""

    def test_pointwise_error_below_1e8(self):
        sigma = 0.1
        spec = GridSpec(n_samples=2 ** 12, x_max=1.0)
        grid = build_density_from_spectrum(lambda w: gaussian_spectrum(w, sigma), 1, spec,
                                           EngineSettings(n_samples=2 ** 12), law='gaussian')
        assert np.max(np.abs(grid.values - norm.pdf(grid.x, scale=sigma))) <= 1e-8
        assert grid.law == 'gaussian'
        assert grid.gamma is None

    def test_sigma_must_be_positive(self):
        with pytest.raises(DomainError):
            gaussian_spectrum(np.zeros(3), 0.0)


class TestStudentReconstruction:
    """t(3) 卷积密度的重建"""

    def test_single_day_matches_closed_form(self, unit_model, small_settings):
        grid = build_density(unit_model, 1, SMALL, small_settings)
        mask = np.abs(grid.x) <= 0.5
        assert np.allclose(grid.values[mask], student_density(grid.x[mask], unit_model.gamma), rtol=1e-5)
        assert grid.integral() == pytest.approx(1.0, abs=1e-12)
        assert grid.gamma == unit_model.gamma

    def test_two_days_match_direct_self_convolution(self, unit_model):
        n = 2 ** 12
        settings = EngineSettings(n_samples=n)
        one = build_density(unit_model, 1, n, settings)
        two = build_density(unit_model, 2, n, settings)

        d = one.spec.spacing
        direct = np.convolve(one.values, one.values, mode='full')[n // 2:n // 2 + n] * d
        assert np.max(np.abs(direct - two.values)) <= 1e-6 * two.peak

    def test_two_day_spectrum_matches_closed_form(self, unit_model):
        n = 2 ** 12
        one = build_density(unit_model, 1, n, EngineSettings(n_samples=n))
        d = one.spec.spacing
        direct = np.convolve(one.values, one.values) * d
        x = 2 * one.x[0] + d * np.arange(direct.size)

        omega = np.linspace(0.0, 250.0, 101)
        spectrum = (direct * np.cos(np.outer(omega, x))).sum(axis=1) * d / SQRT_2PI
        expected = convolution_spectrum(omega, unit_model.gamma, 2)
        assert np.max(np.abs(spectrum - expected)) <= 1e-6

    @pytest.mark.parametrize("first, second", [(4, 4), (3, 5), (1, 7)])
    def test_horizons_add(self, unit_model, small_settings, first, second):
        gamma = unit_model.gamma
        spec = GridSpec(n_samples=SMALL, x_max=unit_model.x_max)
        product = build_density_from_spectrum(
            lambda w: convolution_spectrum(w, gamma, first) * convolution_spectrum(w, gamma, second) * SQRT_2PI,
            first + second, spec, small_settings, gamma=gamma)
        direct = build_density(unit_model, first + second, SMALL, small_settings)
        assert np.max(np.abs(product.values - direct.values)) <= 1e-6 * direct.peak

    @pytest.mark.parametrize("days", [1, 8, 50])
    def test_tail_index_is_four(self, days):
        gamma = 0.02
        wide = ReturnModel.from_width(gamma, 20.0)
        grid = build_density(wide, days, 2 ** 16, EngineSettings(n_samples=2 ** 16))
        mask = (grid.x >= 20 * gamma * np.sqrt(days)) & (grid.x <= wide.x_max / 2)
        slope, _ = np.polyfit(np.log(grid.x[mask]), np.log(grid.values[mask]), 1)
        assert -4.3 < slope < -3.7

    @pytest.mark.parametrize("days", [1, 8, 64])
    def test_variance_grows_linearly(self, unit_model, small_settings, days):
        grid = build_density(unit_model, days, SMALL, small_settings)
        expected = days * truncated_variance(unit_model.gamma, unit_model.x_max)
        assert density_moment(grid, 2) == pytest.approx(expected, rel=5e-3)

    def test_density_is_symmetric(self, unit_model, small_settings):
        grid = build_density(unit_model, 8, SMALL, small_settings)
        assert density_moment(grid, 1) == pytest.approx(0.0, abs=1e-12)
        assert density_moment(grid, 3) == pytest.approx(0.0, abs=1e-12)
        assert np.all(grid.values >= 0)

    def test_peak_is_centre_sample(self, unit_model, small_settings):
        grid = build_density(unit_model, 4, SMALL, small_settings)
        assert grid.peak == pytest.approx(grid.values.max())

    def test_moment_order_limit(self, unit_model, small_settings):
        grid = build_density(unit_model, 1, SMALL, small_settings)
        with pytest.raises(DomainError):
            density_moment(grid, 9)


class TestAliasingGuard:
    """混叠检查"""

    def test_strict_threshold_rejects_long_horizon(self, unit_model):
        strict = EngineSettings(n_samples=SMALL, edge_threshold=2e-5)
        with pytest.raises(HorizonUnavailableError) as info:
            build_density(unit_model, 222, SMALL, strict)
        assert info.value.horizon_days == 222
        assert info.value.edge_ratio > 2e-5

    def test_default_threshold_accepts_table_horizons(self, small_settings):
        narrow = ReturnModel.from_width(0.02, 1.0)
        grid = build_density(narrow, 64, SMALL, small_settings)
        assert grid.integral() == pytest.approx(1.0, abs=1e-12)

    def test_very_long_horizon_unavailable(self, unit_model, small_settings):
        with pytest.raises(HorizonUnavailableError):
            build_density(unit_model, 5000, SMALL, small_settings)

    def test_invalid_arguments(self, unit_model):
        with pytest.raises(DomainError):
            build_density(unit_model, 0, SMALL)
        with pytest.raises(DomainError):
            build_density(unit_model, 1, 2 ** 9)
        with pytest.raises(DomainError):
            EngineSettings(oversampling=3)


class TestCacheAndExport:
    """缓存与导出"""

    def test_cache_returns_same_grid(self, unit_model, small_settings):
        cache = DensityCache()
        first = build_density(unit_model, 8, SMALL, small_settings, cache)
        second = build_density(unit_model, 8, SMALL, small_settings, cache)
        assert first is second
        assert len(cache) == 1
        build_density(unit_model, 9, SMALL, small_settings, cache)
        assert len(cache) == 2

    def test_export_csv(self, unit_model, small_settings, tmp_path):
        grid = build_density(unit_model, 1, 2 ** 10, small_settings)
        path = tmp_path / 'density.csv'
        export_density_csv(grid, str(path))
        frame = pd.read_csv(path)
        assert list(frame.columns) == ['x', 'p']
        assert len(frame) == 2 ** 10 + 1
        assert frame['x'].iloc[-1] == pytest.approx(2.0)
        assert frame['p'].iloc[0] == pytest.approx(frame['p'].iloc[-1])
