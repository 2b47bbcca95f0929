"""
参数校准测试
"""

import json
import os
from datetime import date

import numpy as np
import pytest

from calibration import (CalibrationResult, EmptyObjectiveError, ModelSettings, evaluate_panel, fit_bsm_sigma,
                         fit_gamma, golden_section, log_mse, objective, select_nearest_expiry, synthetic_chain)
from market_data import QuoteRecord, group_chains, parse_chain_csv
from pricing_core import ContractError, OptionKind, PricingConfig, bsm_call
from returns_model import DomainError
from spectral_engine import DensityCache, EngineSettings

SMALL = 2 ** 14
STRIKES = np.linspace(0.9, 1.1, 11)


def small_settings():
    return ModelSettings(n_samples=SMALL, engine=EngineSettings(n_samples=SMALL), cache=DensityCache())


@pytest.fixture(scope='module')
def chain_15():
    return synthetic_chain(0.015, STRIKES, 10, PricingConfig(), model_settings=small_settings())


class TestLogMse:
    """对数价格均方误差"""

    def test_value(self):
        value, included, excluded = log_mse([1.0, np.e], [1.0, 1.0])
        assert value == pytest.approx(0.5)
        assert (included, excluded) == (2, 0)

    def test_zero_model_price_excluded(self):
        value, included, excluded = log_mse([0.0, 2.0], [1.0, 2.0])
        assert value == 0.0
        assert (included, excluded) == (1, 1)

    def test_all_excluded(self):
        with pytest.raises(EmptyObjectiveError):
            log_mse([0.0, 0.0], [1.0, 1.0])


class TestGoldenSection:
    """黄金分割搜索"""

    def test_parabola(self):
        x, fx = golden_section(lambda g: (g - 0.3) ** 2, 0.0, 1.0, tol=1e-8)
        assert x == pytest.approx(0.3, abs=1e-8)
        assert fx == pytest.approx(0.0, abs=1e-15)


class TestObjective:
    """目标函数"""

    def test_zero_at_generating_gamma(self, chain_15, pricing_config):
        assert objective(0.015, chain_15.quotes, pricing_config, small_settings()) == 0.0

    def test_positive_elsewhere(self, chain_15, pricing_config):
        assert objective(0.02, chain_15.quotes, pricing_config, small_settings()) > 1e-4

    def test_continuous_in_gamma(self, chain_15, pricing_config):
        settings = small_settings()
        here = objective(0.02, chain_15.quotes, pricing_config, settings)
        near = objective(0.020001, chain_15.quotes, pricing_config, settings)
        assert near == pytest.approx(here, rel=1e-2)

    def test_days_from_quote_dates(self, chain_15, pricing_config):
        settings = small_settings()
        implicit = objective(0.02, chain_15.quotes, pricing_config, settings)
        explicit = objective(0.02, chain_15.quotes, pricing_config, settings, days_to_maturity=10)
        assert implicit == explicit

    def test_empty(self, pricing_config):
        with pytest.raises(EmptyObjectiveError):
            objective(0.02, [], pricing_config)


class TestFitGamma:
    """γ 的拟合"""

    def test_recovers_generating_gamma(self, chain_15, pricing_config):
        result = fit_gamma(chain_15.quotes, pricing_config, model_settings=small_settings())
        assert result.gamma_hat == pytest.approx(0.015, abs=1e-4)
        assert result.objective_value < 1e-4
        assert result.n_strikes == len(STRIKES)
        assert not result.boundary
        assert result.expiry_used == chain_15.expiry_date

    def test_boundary_is_flagged(self, chain_15, pricing_config):
        result = fit_gamma(chain_15.quotes, pricing_config, bracket=(0.001, 0.01), model_settings=small_settings())
        assert result.boundary
        assert result.gamma_hat == pytest.approx(0.01, abs=1e-4)

    def test_unpriceable_strike_is_excluded(self, chain_15, pricing_config):
        far = QuoteRecord('SYN', chain_15.quote_date, chain_15.expiry_date, 1e6, OptionKind.CALL, 0.01, 0.02)
        result = fit_gamma(list(chain_15.quotes) + [far], pricing_config, model_settings=small_settings())
        assert result.excluded_count == 1
        assert result.n_strikes == len(STRIKES)

    def test_noisy_quotes(self, pricing_config):
        settings = small_settings()
        strikes = np.linspace(0.9, 1.1, 41)
        errors = []
        for seed, days in enumerate([5, 10, 20]):
            chain = synthetic_chain(0.02, strikes, days, pricing_config, noise=0.05, seed=seed,
                                    model_settings=settings)
            errors.append(fit_gamma(chain.quotes, pricing_config, model_settings=settings).objective_value)
        assert 0.00125 <= np.mean(errors) <= 0.00375

    def test_caller_settings_untouched(self, chain_15, pricing_config):
        settings = ModelSettings(n_samples=SMALL, engine=EngineSettings(n_samples=SMALL))
        fit_gamma(chain_15.quotes, pricing_config, model_settings=settings)
        assert settings.cache is None

    def test_too_few_strikes(self, chain_15, pricing_config):
        with pytest.raises(EmptyObjectiveError):
            fit_gamma(chain_15.quotes[:2], pricing_config)

    def test_invalid_bracket(self, chain_15, pricing_config):
        with pytest.raises(DomainError):
            fit_gamma(chain_15.quotes, pricing_config, bracket=(0.1, 0.01))

    def test_mixed_expiries_rejected(self, chain_15, pricing_config):
        other = QuoteRecord('SYN', chain_15.quote_date, date(2018, 4, 2), 1.0, OptionKind.CALL, 0.01, 0.02)
        with pytest.raises(ContractError):
            fit_gamma(list(chain_15.quotes) + [other], pricing_config)

    def test_put_quotes_rejected(self, chain_15, pricing_config):
        put = QuoteRecord('SYN', chain_15.quote_date, chain_15.expiry_date, 1.0, OptionKind.PUT, 0.01, 0.02)
        with pytest.raises(ContractError):
            fit_gamma(list(chain_15.quotes) + [put], pricing_config)

    def test_result_json(self, chain_15, pricing_config):
        result = CalibrationResult('SYN', date(2018, 2, 28), chain_15.expiry_date, 0.015, 0.0, 11)
        data = json.loads(result.to_json())
        assert data['quote_date'] == '2018-02-28'
        assert data['bracket'] == [0.001, 0.1]
        assert data['drift'] == 'rn'


class TestReferenceModel:
    """BSM 参考拟合"""

    def test_recovers_sigma(self, pricing_config):
        quote_date, expiry = date(2018, 2, 28), date(2018, 3, 14)
        quotes = []
        for k in STRIKES:
            price = bsm_call(1.0, k, 10 / 252, 0.3, 0.02)
            quotes.append(QuoteRecord('SYN', quote_date, expiry, float(k), OptionKind.CALL, price, price))
        sigma, mse = fit_bsm_sigma(quotes, pricing_config)
        assert sigma == pytest.approx(0.3, abs=1e-4)
        assert mse < 1e-8


class TestPanel:
    """多到期日误差表"""

    def test_unavailable_expiry(self, pricing_config):
        generator = ModelSettings(n_samples=SMALL)
        short = synthetic_chain(0.02, STRIKES, 10, pricing_config, model_settings=generator)
        long = synthetic_chain(0.02, STRIKES, 222, pricing_config, model_settings=generator)

        strict = ModelSettings(n_samples=SMALL, engine=EngineSettings(n_samples=SMALL, edge_threshold=2e-5))
        panel = evaluate_panel(0.02, [long, short], pricing_config, strict, sigma_reference=0.3)

        assert [row.days_to_maturity for row in panel.rows] == [10, 222]
        first, second = panel.rows
        assert first.available and first.model_mse == 0.0
        assert first.reference_mse > 0
        assert not second.available
        assert second.model_mse is None

        frame = panel.to_frame()
        assert list(frame['available']) == [True, False]

    def test_noise_level_sets_model_error(self, pricing_config):
        settings = small_settings()
        strikes = np.linspace(0.9, 1.1, 41)
        chains = [synthetic_chain(0.02, strikes, days, pricing_config, noise=0.05, seed=seed,
                                  model_settings=settings)
                  for seed, days in enumerate([5, 10, 20])]
        panel = evaluate_panel(0.02, chains, pricing_config, settings)
        assert all(row.available for row in panel.rows)
        assert 0.00125 <= np.mean([row.model_mse for row in panel.rows]) <= 0.00375

    def test_select_nearest_expiry(self, fixtures_dir):
        records, _ = parse_chain_csv(os.path.join(fixtures_dir, 'chain_sample.csv'))
        chains = group_chains(records)
        chosen = select_nearest_expiry(chains)
        assert (chosen.symbol, chosen.expiry_date) == ('AAPL', date(2018, 3, 2))
        assert select_nearest_expiry(chains, symbol='MSFT') is None

    def test_synthetic_chain_layout(self, chain_15):
        assert chain_15.days_to_maturity == 10
        assert chain_15.expiry_date == date(2018, 3, 14)
        assert chain_15.strikes == pytest.approx(list(STRIKES))
