#!/usr/bin/env python3
"""
HTO (Heavy-Tailed Options) - 定价核心模块

这个模块用梯形法则在密度网格上计算欧式看涨/看跌期权的公平价格，并提供 Black-Scholes-Merton
参考定价、看跌-看涨平价残差以及隐含波动率反解。

日期约定：τ 以交易日计，贴现用 days·(r_annual/252)；漂移 μ 为每日值。
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Any, List, Mapping, Optional, Sequence, Union

import numpy as np
from scipy.integrate import trapezoid
from scipy.stats import norm

from config_manager import resolve_threads, setup_logger
from returns_model import DensityGrid, DomainError, GridSpec
from spectral_engine import EngineSettings, build_density_from_spectrum, gaussian_spectrum

logger = setup_logger('HTO.PricingCore', 'pricing_log.log')


class OptionKind(Enum):
    """期权类型枚举"""
    CALL = "call"
    PUT = "put"


class DriftMode(Enum):
    """漂移约定枚举"""
    RISK_NEUTRAL_QUADRATIC = "rn"   # μ = r - γ²/2（每日）
    EXPLICIT = "explicit"           # 显式给定的每日 μ


class ContractError(ValueError):
    """合约与网格不匹配（类型或期限）"""
    pass


@dataclass(frozen=True)
class NoSolution:
    """隐含波动率无解（这是一个值，而不是错误）"""
    reason: str


@dataclass(frozen=True)
class OptionContract:
    """欧式期权合约：行权价、剩余交易日、类型"""

    strike: float
    days_to_maturity: int
    kind: OptionKind = OptionKind.CALL

    def __post_init__(self):
        if not self.strike > 0:
            raise ContractError(f"strike must be positive, got {self.strike}")
        if int(self.days_to_maturity) != self.days_to_maturity or self.days_to_maturity < 1:
            raise ContractError(f"days_to_maturity must be a positive integer, got {self.days_to_maturity}")

    def as_kind(self, kind: OptionKind) -> 'OptionContract':
        return OptionContract(self.strike, self.days_to_maturity, kind)


@dataclass(frozen=True)
class PricingConfig:
    """
    定价上下文：现价、年化无风险利率、交易日历与漂移约定

    Attributes:
        spot: 现价 S_t
        annual_rate: 连续复利年化利率 r
        trading_days_per_year: 每年交易日数，默认 252
        drift_mode: 漂移约定
        explicit_mu: drift_mode 为 EXPLICIT 时使用的每日漂移
    """

    spot: float = 1.0
    annual_rate: float = 0.02
    trading_days_per_year: int = 252
    drift_mode: DriftMode = DriftMode.RISK_NEUTRAL_QUADRATIC
    explicit_mu: float = 0.0

    def __post_init__(self):
        if not self.spot > 0:
            raise DomainError(f"spot must be positive, got {self.spot}")
        if not 200 <= self.trading_days_per_year <= 260:
            raise DomainError(f"trading_days_per_year must be within [200, 260], got {self.trading_days_per_year}")

    @classmethod
    def from_settings(cls, settings: Mapping[str, Any], spot: float = 1.0) -> 'PricingConfig':
        mode, mu = parse_drift(str(settings.get('drift_mode', 'rn')))
        return cls(spot=spot,
                   annual_rate=float(settings.get('annual_rate', 0.02)),
                   trading_days_per_year=int(settings.get('trading_days_per_year', 252)),
                   drift_mode=mode, explicit_mu=mu)

    @property
    def daily_rate(self) -> float:
        return self.annual_rate / self.trading_days_per_year

    def discount(self, days: int) -> float:
        return math.exp(-self.daily_rate * days)

    def daily_drift(self, gamma: Optional[float]) -> float:
        """每日漂移 μ"""
        if self.drift_mode is DriftMode.EXPLICIT:
            return self.explicit_mu
        if gamma is None:
            raise ContractError("risk-neutral drift needs the unit-period gamma of the grid")
        return self.daily_rate - 0.5 * gamma * gamma

    def describe_drift(self) -> str:
        if self.drift_mode is DriftMode.EXPLICIT:
            return f"explicit:{self.explicit_mu!r}"
        return DriftMode.RISK_NEUTRAL_QUADRATIC.value


def parse_drift(text: str):
    """
    解析漂移约定字符串

    Args:
        text (str): 'rn' 或 'explicit:<μ>'

    Returns:
        (DriftMode, float)
    """
    text = text.strip()
    if text == DriftMode.RISK_NEUTRAL_QUADRATIC.value:
        return DriftMode.RISK_NEUTRAL_QUADRATIC, 0.0
    if text.startswith('explicit:'):
        try:
            return DriftMode.EXPLICIT, float(text.split(':', 1)[1])
        except ValueError:
            pass
    raise DomainError(f"drift must be 'rn' or 'explicit:<mu>', got {text!r}")


@dataclass(frozen=True)
class PriceResult:
    """定价结果"""
    price: float
    quadrature_nodes: int
    intrinsic: float


def _integrand(grid: DensityGrid, spot: float, strike: float, growth: float):
    x, p = grid.closed_nodes()
    return x, (spot * np.exp(growth + x) - strike) * p


def _call_integral(grid: DensityGrid, spot: float, strike: float, growth: float):
    """
    ∫_{x_l}^{x_max} [S e^{μτ+x} - K] p(x) dx

    x_l 处被积函数为零，第一个不完整梯形按 x_l 到下一节点线性插值。
    """
    x_l = math.log(strike / spot) - growth
    x, f = _integrand(grid, spot, strike, growth)
    if x_l >= x[-1]:
        return 0.0, 0
    if x_l <= x[0]:
        return float(trapezoid(f, x)), len(x)
    i = int(np.searchsorted(x, x_l, side='right')) - 1
    partial = 0.5 * (x[i + 1] - x_l) * f[i + 1]
    return partial + float(trapezoid(f[i + 1:], x[i + 1:])), len(x) - i


def _put_integral(grid: DensityGrid, spot: float, strike: float, growth: float):
    """∫_{-x_max}^{x_l} [K - S e^{μτ+x}] p(x) dx（下限取截断点而非 -∞）"""
    x_l = math.log(strike / spot) - growth
    x, f = _integrand(grid, spot, strike, growth)
    if x_l <= x[0]:
        return 0.0, 0
    if x_l >= x[-1]:
        return -float(trapezoid(f, x)), len(x)
    i = int(np.searchsorted(x, x_l, side='right')) - 1
    partial = 0.5 * (x_l - x[i]) * f[i]
    return -(partial + float(trapezoid(f[:i + 1], x[:i + 1]))), i + 2


def _check_contract(grid: DensityGrid, contract: OptionContract, kind: OptionKind) -> None:
    if contract.kind is not kind:
        raise ContractError(f"expected a {kind.value} contract, got {contract.kind.value}")
    if grid.horizon_days != contract.days_to_maturity:
        raise ContractError(
            f"grid horizon {grid.horizon_days} does not match maturity {contract.days_to_maturity}")


def price_call(grid: DensityGrid, contract: OptionContract, config: PricingConfig) -> PriceResult:
    """
    欧式看涨期权价格

    Args:
        grid (DensityGrid): 与到期日相同周期的密度
        contract (OptionContract): 看涨合约
        config (PricingConfig): 定价上下文

    Returns:
        PriceResult: 价格、使用的节点数、贴现内在价值
    """
    _check_contract(grid, contract, OptionKind.CALL)
    days = contract.days_to_maturity
    growth = config.daily_drift(grid.gamma) * days
    discount = config.discount(days)

    value, nodes = _call_integral(grid, config.spot, contract.strike, growth)
    intrinsic = max(0.0, config.spot - contract.strike * discount)
    return PriceResult(price=max(0.0, discount * value), quadrature_nodes=nodes, intrinsic=intrinsic)


def price_put(grid: DensityGrid, contract: OptionContract, config: PricingConfig) -> PriceResult:
    """欧式看跌期权价格，参数同 price_call"""
    _check_contract(grid, contract, OptionKind.PUT)
    days = contract.days_to_maturity
    growth = config.daily_drift(grid.gamma) * days
    discount = config.discount(days)

    value, nodes = _put_integral(grid, config.spot, contract.strike, growth)
    intrinsic = max(0.0, contract.strike * discount - config.spot)
    return PriceResult(price=max(0.0, discount * value), quadrature_nodes=nodes, intrinsic=intrinsic)


def price_contract(grid: DensityGrid, contract: OptionContract, config: PricingConfig) -> PriceResult:
    if contract.kind is OptionKind.CALL:
        return price_call(grid, contract, config)
    return price_put(grid, contract, config)


def price_panel(grid: DensityGrid,
                strikes: Sequence[float],
                kind: OptionKind,
                config: PricingConfig,
                threads: Optional[int] = None) -> List[PriceResult]:
    """
    在同一网格上并发计算一组行权价的价格，结果顺序与输入一致

    Args:
        grid (DensityGrid): 密度网格
        strikes: 行权价列表
        kind (OptionKind): 期权类型
        config (PricingConfig): 定价上下文
        threads (int): 线程数，None 表示按环境变量决定

    Returns:
        List[PriceResult]: 与 strikes 一一对应的结果
    """
    contracts = [OptionContract(float(k), grid.horizon_days, kind) for k in strikes]
    with ThreadPoolExecutor(max_workers=resolve_threads(threads)) as pool:
        return list(pool.map(lambda c: price_contract(grid, c, config), contracts))


def parity_residual(grid: DensityGrid, strike: float, config: PricingConfig) -> float:
    """
    看跌-看涨平价残差 (C - P) - (S - K e^{-rτ})

    Args:
        grid (DensityGrid): 密度网格
        strike (float): 行权价
        config (PricingConfig): 定价上下文

    Returns:
        float: 残差
    """
    days = grid.horizon_days
    call = price_call(grid, OptionContract(strike, days, OptionKind.CALL), config).price
    put = price_put(grid, OptionContract(strike, days, OptionKind.PUT), config).price
    return (call - put) - (config.spot - strike * config.discount(days))


def bsm_call(spot: float, strike: float, tau_years: float, sigma_annual: float, rate_annual: float) -> float:
    """
    Black-Scholes-Merton 看涨期权闭式解

    波动率或期限为零时退化为 max(0, S - K e^{-rτ})。
    """
    if not (spot > 0 and strike > 0):
        raise DomainError("spot and strike must be positive")
    if tau_years < 0 or sigma_annual < 0:
        raise DomainError("tau and sigma must be nonnegative")

    discount = math.exp(-rate_annual * tau_years)
    if sigma_annual == 0 or tau_years == 0:
        return max(0.0, spot - strike * discount)

    vol = sigma_annual * math.sqrt(tau_years)
    d1 = (math.log(spot / strike) + (rate_annual + 0.5 * sigma_annual ** 2) * tau_years) / vol
    d2 = d1 - vol
    return spot * norm.cdf(d1) - strike * discount * norm.cdf(d2)


def bsm_put(spot: float, strike: float, tau_years: float, sigma_annual: float, rate_annual: float) -> float:
    """由平价关系得到的 BSM 看跌期权价格"""
    call = bsm_call(spot, strike, tau_years, sigma_annual, rate_annual)
    return call - spot + strike * math.exp(-rate_annual * tau_years)


def bsm_call_integral(spot: float, strike: float, tau_years: float, sigma_annual: float,
                      rate_annual: float, n_samples: int = 2 ** 14,
                      settings: Optional[EngineSettings] = None) -> float:
    """
    BSM 看涨期权的积分形式：在正态密度网格上做同样的梯形积分，漂移 μ = r - σ²/2

    用于与闭式解交叉校验。窗口取 12 个标准差（至少为 1）。
    """
    if not sigma_annual > 0 or not tau_years > 0:
        return bsm_call(spot, strike, tau_years, sigma_annual, rate_annual)

    sigma_t = sigma_annual * math.sqrt(tau_years)
    spec = GridSpec(n_samples=n_samples, x_max=max(1.0, 12.0 * sigma_t))
    settings = (settings or EngineSettings()).with_samples(n_samples)
    grid = build_density_from_spectrum(lambda omega: gaussian_spectrum(omega, sigma_t),
                                       horizon_days=1, spec=spec, settings=settings, law='gaussian')

    growth = (rate_annual - 0.5 * sigma_annual ** 2) * tau_years
    value, _ = _call_integral(grid, spot, strike, growth)
    return math.exp(-rate_annual * tau_years) * value


def implied_vol_bsm(market_price: float, spot: float, strike: float, tau_years: float,
                    rate_annual: float, sigma_low: float = 1e-6, sigma_high: float = 5.0,
                    tol: float = 1e-8, max_iter: int = 200) -> Union[float, NoSolution]:
    """
    二分法反解 BSM 隐含波动率

    Args:
        market_price (float): 看涨期权市场价格
        spot, strike, tau_years, rate_annual: 合约与市场参数
        sigma_low, sigma_high: 搜索区间
        tol (float): 价格容差

    Returns:
        float 或 NoSolution: 报价低于零波动率下界（或高于区间上端价格）时无解
    """
    if not market_price > 0:
        raise DomainError(f"market price must be positive, got {market_price}")
    if market_price >= spot:
        raise DomainError(f"call price {market_price} cannot reach the spot {spot}")

    floor = max(0.0, spot - strike * math.exp(-rate_annual * tau_years))
    if market_price < floor:
        logger.info(f"No implied vol: price {market_price} below zero-volatility value {floor}")
        return NoSolution("price below the zero-volatility value")

    low, high = sigma_low, sigma_high
    if market_price > bsm_call(spot, strike, tau_years, high, rate_annual):
        return NoSolution("price above the upper volatility bracket")

    mid = 0.5 * (low + high)
    for _ in range(max_iter):
        mid = 0.5 * (low + high)
        price_mid = bsm_call(spot, strike, tau_years, mid, rate_annual)
        if abs(price_mid - market_price) < tol:
            return mid
        if price_mid < market_price:
            low = mid
        else:
            high = mid
    return mid
