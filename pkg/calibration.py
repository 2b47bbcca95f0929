#!/usr/bin/env python3
"""
HTO (Heavy-Tailed Options) - 参数校准模块

这个模块对每个标的用最近到期日的看涨期权报价拟合唯一的模型参数 γ：
最小化模型价格与市场中间价对数差的均方误差 ε(γ)。随后用同一个 γ 评估更长期限的误差。
"""

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from datetime import date
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from config_manager import resolve_threads, setup_logger
from market_data import Chain, QuoteRecord, trading_days_between
from pricing_core import ContractError, OptionKind, PricingConfig, bsm_call, price_panel
from returns_model import DomainError, ReturnModel
from spectral_engine import DensityCache, EngineSettings, HorizonUnavailableError, build_density

logger = setup_logger('HTO.Calibration', 'calibration_log.log')

PHI_RATIO = 2.0 / (1.0 + math.sqrt(5.0))
COARSE_POINTS = 20
MIN_STRIKES = 3


class EmptyObjectiveError(ValueError):
    """所有行权价都被排除，目标函数无定义"""
    pass


@dataclass(frozen=True)
class CalibrationResult:
    """γ 的拟合结果"""

    symbol: str
    quote_date: date
    expiry_used: date
    gamma_hat: float
    objective_value: float
    n_strikes: int
    excluded_count: int = 0
    boundary: bool = False
    drift: str = 'rn'
    bracket: Tuple[float, float] = (0.001, 0.1)

    def to_dict(self) -> dict:
        data = asdict(self)
        data['quote_date'] = self.quote_date.isoformat()
        data['expiry_used'] = self.expiry_used.isoformat()
        data['bracket'] = list(self.bracket)
        return data

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False, sort_keys=True)


@dataclass(frozen=True)
class PanelRow:
    """单个到期日的对数价格均方误差；无法定价时 available 为 False"""
    days_to_maturity: int
    expiry_date: date
    model_mse: Optional[float]
    reference_mse: Optional[float]
    n_strikes: int
    available: bool = True


@dataclass(frozen=True)
class ErrorPanel:
    """各到期日的误差表"""
    gamma_hat: float
    rows: Tuple[PanelRow, ...] = field(default_factory=tuple)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([{
            'days_to_maturity': r.days_to_maturity,
            'expiry_date': r.expiry_date.isoformat(),
            'model_mse': r.model_mse,
            'reference_mse': r.reference_mse,
            'n_strikes': r.n_strikes,
            'available': r.available,
        } for r in self.rows], columns=['days_to_maturity', 'expiry_date', 'model_mse',
                                         'reference_mse', 'n_strikes', 'available'])

    def to_csv(self, path_or_buf=None):
        return self.to_frame().to_csv(path_or_buf, index=False, float_format='%.17g')


@dataclass
class ModelSettings:
    """校准时构造密度所用的数值参数"""
    m_mult: float = 100.0
    n_samples: int = 2 ** 16
    engine: Optional[EngineSettings] = None
    cache: Optional[DensityCache] = None


def _days_of(quotes: Sequence[QuoteRecord]) -> int:
    first = quotes[0]
    for q in quotes:
        if q.kind is not OptionKind.CALL:
            raise ContractError("calibration uses call quotes only")
        if q.expiry_date != first.expiry_date or q.quote_date != first.quote_date:
            raise ContractError("all quotes must share one quote date and expiry")
    return trading_days_between(first.quote_date, first.expiry_date)


def log_mse(model_prices: Sequence[float], market_prices: Sequence[float]) -> Tuple[float, int, int]:
    """
    对数价格均方误差，模型价格为零的行权价被排除

    Returns:
        (均方误差, 纳入数, 排除数)
    """
    model = np.asarray(model_prices, dtype=float)
    market = np.asarray(market_prices, dtype=float)
    keep = model > 0
    if not np.any(keep):
        raise EmptyObjectiveError("every strike has a zero model price")
    diff = np.log(model[keep]) - np.log(market[keep])
    return float(np.mean(diff * diff)), int(keep.sum()), int((~keep).sum())


def _objective_terms(gamma: float, quotes: Sequence[QuoteRecord], config: PricingConfig,
                     model_settings: ModelSettings, days: int) -> Tuple[float, int, int]:
    model = ReturnModel.from_multiple(gamma, model_settings.m_mult)
    grid = build_density(model, days, model_settings.n_samples, model_settings.engine, model_settings.cache)
    results = price_panel(grid, [q.strike for q in quotes], OptionKind.CALL, config, threads=1)
    return log_mse([r.price for r in results], [q.mid for q in quotes])


def objective(gamma: float,
              quotes: Sequence[QuoteRecord],
              config: PricingConfig,
              model_settings: Optional[ModelSettings] = None,
              days_to_maturity: Optional[int] = None) -> float:
    """
    ε(γ) = (1/N_K) Σ [log C_T(K, γ) - log C_market(K)]²

    Args:
        gamma (float): 模型参数
        quotes: 同一到期日的看涨报价
        config (PricingConfig): 定价上下文
        model_settings (ModelSettings): 数值参数
        days_to_maturity (int): 剩余交易日，缺省时由报价日期计算

    Returns:
        float: 均方误差
    """
    if not quotes:
        raise EmptyObjectiveError("no quotes")
    days = days_to_maturity or _days_of(quotes)
    value, _, _ = _objective_terms(gamma, quotes, config, model_settings or ModelSettings(), days)
    return value


def golden_section(f: Callable[[float], float], low: float, high: float,
                   tol: float = 1e-5, max_iter: int = 200) -> Tuple[float, float]:
    """
    黄金分割法求单峰函数的极小值

    Returns:
        (极小点, 极小值)
    """
    x1 = high - PHI_RATIO * (high - low)
    x2 = low + PHI_RATIO * (high - low)
    f1, f2 = f(x1), f(x2)
    iteration = 0
    while iteration < max_iter and abs(high - low) > tol:
        if f2 > f1:
            high, x2, f2 = x2, x1, f1
            x1 = high - PHI_RATIO * (high - low)
            f1 = f(x1)
        else:
            low, x1, f1 = x1, x2, f2
            x2 = low + PHI_RATIO * (high - low)
            f2 = f(x2)
        iteration += 1

    if iteration == max_iter:
        logger.warning(f"Golden section stopped after {max_iter} iterations, width {high - low:.3e}")
    x_best = 0.5 * (low + high)
    return x_best, f(x_best)


def _minimize(f: Callable[[float], float], bracket: Tuple[float, float], tol: float):
    """先在对数网格上粗搜，再在最优点的相邻区间内做黄金分割"""
    low, high = bracket
    coarse = np.geomspace(low, high, COARSE_POINTS)
    values = [f(g) for g in coarse]
    best = int(np.nanargmin(values))

    sub_low = coarse[max(best - 1, 0)]
    sub_high = coarse[min(best + 1, COARSE_POINTS - 1)]
    x_best, f_best = golden_section(f, sub_low, sub_high, tol)

    if values[best] < f_best:
        x_best, f_best = float(coarse[best]), values[best]
    boundary = x_best - low < 2 * tol or high - x_best < 2 * tol
    return float(x_best), float(f_best), bool(boundary)


def fit_gamma(quotes: Sequence[QuoteRecord],
              config: PricingConfig,
              bracket: Tuple[float, float] = (0.001, 0.1),
              model_settings: Optional[ModelSettings] = None,
              tol: float = 1e-5) -> CalibrationResult:
    """
    用黄金分割法最小化 ε(γ)

    Args:
        quotes: 最近到期日的看涨报价
        config (PricingConfig): 定价上下文
        bracket: γ 的搜索区间
        model_settings (ModelSettings): 数值参数
        tol (float): 区间宽度收敛阈值

    Returns:
        CalibrationResult: 拟合结果；解落在区间端点时 boundary 为 True
    """
    if len(quotes) < MIN_STRIKES:
        raise EmptyObjectiveError(f"calibration needs at least {MIN_STRIKES} strikes, got {len(quotes)}")
    low, high = bracket
    if not 0 < low < high:
        raise DomainError(f"invalid bracket {bracket}")

    model_settings = model_settings or ModelSettings()
    if model_settings.cache is None:
        model_settings = replace(model_settings, cache=DensityCache())
    days = _days_of(quotes)

    def f(gamma: float) -> float:
        try:
            return _objective_terms(gamma, quotes, config, model_settings, days)[0]
        except (EmptyObjectiveError, HorizonUnavailableError):
            return math.inf

    gamma_hat, value, boundary = _minimize(f, (low, high), tol)
    if not math.isfinite(value):
        raise EmptyObjectiveError("objective undefined across the whole bracket")

    _, included, excluded = _objective_terms(gamma_hat, quotes, config, model_settings, days)
    first = quotes[0]
    result = CalibrationResult(symbol=first.symbol, quote_date=first.quote_date,
                               expiry_used=first.expiry_date, gamma_hat=gamma_hat,
                               objective_value=value, n_strikes=included, excluded_count=excluded,
                               boundary=boundary, drift=config.describe_drift(), bracket=(low, high))

    logger.info(f"Calibrated {first.symbol} {first.expiry_date}: gamma={gamma_hat:.6f}, "
                f"eps={value:.6g}, strikes={included}, excluded={excluded}")
    if boundary:
        logger.warning(f"{first.symbol}: gamma_hat {gamma_hat:.6f} sits on the bracket boundary {bracket}")
    if not 0.01 <= gamma_hat <= 0.03:
        logger.warning(f"{first.symbol}: gamma_hat {gamma_hat:.6f} outside the usual [0.01, 0.03] range")
    return result


def _bsm_prices(sigma_annual: float, quotes: Sequence[QuoteRecord], config: PricingConfig, days: int):
    tau = days / config.trading_days_per_year
    return [bsm_call(config.spot, q.strike, tau, sigma_annual, config.annual_rate) for q in quotes]


def fit_bsm_sigma(quotes: Sequence[QuoteRecord], config: PricingConfig,
                  bracket: Tuple[float, float] = (0.01, 2.0), tol: float = 1e-6) -> Tuple[float, float]:
    """
    以同样的对数价格均方误差拟合 BSM 年化波动率（参考模型）

    Returns:
        (σ, 均方误差)
    """
    if len(quotes) < MIN_STRIKES:
        raise EmptyObjectiveError(f"needs at least {MIN_STRIKES} strikes, got {len(quotes)}")
    days = _days_of(quotes)
    market = [q.mid for q in quotes]

    def f(sigma: float) -> float:
        try:
            return log_mse(_bsm_prices(sigma, quotes, config, days), market)[0]
        except EmptyObjectiveError:
            return math.inf

    sigma, value, _ = _minimize(f, bracket, tol)
    logger.info(f"BSM reference fit: sigma={sigma:.6f}, eps={value:.6g}")
    return sigma, value


def select_nearest_expiry(chains: Sequence[Chain], symbol: Optional[str] = None,
                          quote_date: Optional[date] = None) -> Optional[Chain]:
    """选出最近到期、且至少有 MIN_STRIKES 个行权价的看涨期权链"""
    candidates = [c for c in chains
                  if c.kind is OptionKind.CALL and len(c.quotes) >= MIN_STRIKES
                  and (symbol is None or c.symbol == symbol)
                  and (quote_date is None or c.quote_date == quote_date)]
    if not candidates:
        return None
    return min(candidates, key=lambda c: (c.expiry_date, c.symbol))


def evaluate_panel(gamma_hat: float,
                   chains: Sequence[Chain],
                   config: PricingConfig,
                   model_settings: Optional[ModelSettings] = None,
                   sigma_reference: Optional[float] = None,
                   threads: Optional[int] = None) -> ErrorPanel:
    """
    用同一个 γ 计算各到期日的对数价格均方误差

    Args:
        gamma_hat (float): 拟合得到的 γ
        chains: 按到期日分组的看涨期权链
        config (PricingConfig): 定价上下文
        model_settings (ModelSettings): 数值参数
        sigma_reference (float): 可选的 BSM 参考波动率
        threads (int): 线程数

    Returns:
        ErrorPanel: 误差表；无法定价的到期日 available=False
    """
    model_settings = model_settings or ModelSettings()
    calls = sorted((c for c in chains if c.kind is OptionKind.CALL), key=lambda c: c.expiry_date)
    model = ReturnModel.from_multiple(gamma_hat, model_settings.m_mult)

    def evaluate(chain: Chain) -> PanelRow:
        market = chain.mids
        try:
            grid = build_density(model, chain.days_to_maturity, model_settings.n_samples,
                                 model_settings.engine, model_settings.cache)
            prices = [r.price for r in price_panel(grid, chain.strikes, OptionKind.CALL, config, threads=1)]
            model_mse, included, _ = log_mse(prices, market)
        except (HorizonUnavailableError, EmptyObjectiveError) as e:
            logger.warning(f"Expiry {chain.expiry_date} ({chain.days_to_maturity} days) unavailable: {e}")
            return PanelRow(chain.days_to_maturity, chain.expiry_date, None, None, len(market), available=False)

        reference = None
        if sigma_reference is not None:
            try:
                reference = log_mse(_bsm_prices(sigma_reference, chain.quotes, config,
                                                chain.days_to_maturity), market)[0]
            except EmptyObjectiveError:
                reference = None
        return PanelRow(chain.days_to_maturity, chain.expiry_date, model_mse, reference, included)

    with ThreadPoolExecutor(max_workers=resolve_threads(threads)) as pool:
        rows = tuple(pool.map(evaluate, calls))
    return ErrorPanel(gamma_hat=gamma_hat, rows=rows)


def synthetic_chain(gamma: float,
                    strikes: Sequence[float],
                    days: int,
                    config: PricingConfig,
                    symbol: str = 'SYN',
                    quote_date: date = date(2018, 2, 28),
                    noise: float = 0.0,
                    seed: int = 0,
                    spread: float = 0.0,
                    model_settings: Optional[ModelSettings] = None) -> Chain:
    """
    由模型本身生成的期权链（可加入乘性噪声），用于自洽性检验

    Args:
        gamma (float): 生成参数
        strikes: 行权价
        days (int): 剩余交易日
        config (PricingConfig): 定价上下文
        symbol (str): 标的代码
        quote_date (date): 报价日，到期日按工作日向后推 days 天
        noise (float): 乘性噪声 e^{noise·Z} 的尺度
        seed (int): 噪声种子
        spread (float): 相对买卖价差
        model_settings (ModelSettings): 数值参数

    Returns:
        Chain: 看涨期权链，中间价为模型价格
    """
    model_settings = model_settings or ModelSettings()
    model = ReturnModel.from_multiple(gamma, model_settings.m_mult)
    grid = build_density(model, days, model_settings.n_samples, model_settings.engine, model_settings.cache)
    prices = np.array([r.price for r in price_panel(grid, strikes, OptionKind.CALL, config, threads=1)])
    if noise > 0:
        rng = np.random.Generator(np.random.PCG64(seed))
        prices = prices * np.exp(noise * rng.standard_normal(prices.size))

    expiry = np.busday_offset(np.datetime64(quote_date, 'D'), days, roll='forward').astype(date)
    quotes = tuple(QuoteRecord(symbol=symbol, quote_date=quote_date, expiry_date=expiry,
                               strike=float(k), kind=OptionKind.CALL,
                               bid=float(p * (1 - 0.5 * spread)), ask=float(p * (1 + 0.5 * spread)),
                               volume=100, open_interest=1000)
                   for k, p in zip(strikes, prices) if p > 0)
    return Chain(symbol, quote_date, expiry, days, OptionKind.CALL, quotes)
