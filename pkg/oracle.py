#!/usr/bin/env python3
"""
HTO (Heavy-Tailed Options) - 蒙特卡洛对照模块

独立于谱方法的定价路径：逐日抽取截断 t(3) 收益率，求和得到 N 日收益率，再对贴现收益取平均。
注意这里的分布是“先截断后卷积”，与定价网格“先卷积后截断”的差别由 Hölder 上界控制。
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import stats

from config_manager import resolve_threads, setup_logger
from pricing_core import OptionContract, OptionKind, PricingConfig
from returns_model import DomainError, ReturnModel, student_cdf
from spectral_engine import EngineSettings
from truncation_analysis import holder_bound_nfold, payoff_weighted_bound

logger = setup_logger('HTO.Oracle', 'oracle_log.log')

MIN_PATHS = 10_000
DEFAULT_BATCH = 2 ** 16


@dataclass(frozen=True)
class McEstimate:
    """蒙特卡洛估计值及其可复现元数据"""
    price: float
    std_error: float
    n_paths: int
    seed: int
    generator: str = 'PCG64'
    batch_size: int = DEFAULT_BATCH


def _unit_law(gamma: float):
    # p_S 即标准 t(3) 缩放 γ/√3（方差 γ²）
    return stats.t(df=3, scale=gamma / math.sqrt(3.0))


def _draw(model: ReturnModel, size, rng: np.random.Generator) -> np.ndarray:
    low, high = student_cdf(-model.x_max, model.gamma), student_cdf(model.x_max, model.gamma)
    u = rng.uniform(low, high, size=size)
    x = _unit_law(model.gamma).ppf(u)
    inner = np.nextafter(model.x_max, 0.0)
    return np.clip(x, -inner, inner)


def sample_truncated_t(model: ReturnModel, n: int, seed: int) -> np.ndarray:
    """
    从截断并归一化的 t(3) 分布中独立抽样（逆分布函数法）

    Args:
        model (ReturnModel): 单位周期分布
        n (int): 样本数
        seed (int): 随机种子

    Returns:
        np.ndarray: 位于 (-x_max, x_max) 的样本
    """
    if n < 1:
        raise DomainError(f"n must be positive, got {n}")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    return _draw(model, n, rng)


def _batch_moments(model: ReturnModel, contract: OptionContract, config: PricingConfig,
                   size: int, seed_seq: np.random.SeedSequence):
    rng = np.random.Generator(np.random.PCG64(seed_seq))
    days = contract.days_to_maturity
    x = _draw(model, (size, days), rng).sum(axis=1)
    terminal = config.spot * np.exp(config.daily_drift(model.gamma) * days + x)
    if contract.kind is OptionKind.CALL:
        payoff = np.maximum(terminal - contract.strike, 0.0)
    else:
        payoff = np.maximum(contract.strike - terminal, 0.0)
    return float(payoff.sum()), float(np.square(payoff).sum())


def mc_price(model: ReturnModel,
             contract: OptionContract,
             config: PricingConfig,
             n_paths: int = 1_000_000,
             seed: int = 20180228,
             batch_size: int = DEFAULT_BATCH,
             threads: Optional[int] = None) -> McEstimate:
    """
    蒙特卡洛期权价格

    路径按固定大小分批，每批的子种子由主种子派生，因此结果与线程数无关。

    Args:
        model (ReturnModel): 单位周期分布
        contract (OptionContract): 合约
        config (PricingConfig): 定价上下文
        n_paths (int): 路径数，不少于 10^4
        seed (int): 主种子
        batch_size (int): 每批路径数
        threads (int): 线程数

    Returns:
        McEstimate: 价格与标准误
    """
    if n_paths < MIN_PATHS:
        raise DomainError(f"n_paths must be at least {MIN_PATHS}, got {n_paths}")

    sizes = [batch_size] * (n_paths // batch_size)
    if n_paths % batch_size:
        sizes.append(n_paths % batch_size)
    children = np.random.SeedSequence(seed).spawn(len(sizes))

    with ThreadPoolExecutor(max_workers=resolve_threads(threads)) as pool:
        moments = list(pool.map(
            lambda job: _batch_moments(model, contract, config, job[0], job[1]), zip(sizes, children)))

    total = sum(m[0] for m in moments)
    total_sq = sum(m[1] for m in moments)
    mean = total / n_paths
    variance = max(0.0, (total_sq - n_paths * mean * mean) / (n_paths - 1))

    discount = config.discount(contract.days_to_maturity)
    estimate = McEstimate(price=discount * mean,
                          std_error=discount * math.sqrt(variance / n_paths),
                          n_paths=n_paths, seed=seed, batch_size=batch_size)
    logger.info(f"MC {contract.kind.value} K={contract.strike} N={contract.days_to_maturity}: "
                f"{estimate.price:.8g} ± {estimate.std_error:.2e} ({n_paths} paths)")
    return estimate


def ordering_error_budget(model: ReturnModel,
                          contract: OptionContract,
                          config: PricingConfig,
                          n_points: int = 401,
                          n_samples: int = 2 ** 14,
                          settings: Optional[EngineSettings] = None) -> float:
    """
    两种分布（先截断后卷积 / 先卷积后截断）造成的价格差异预算

    即贴现收益对 Hölder 误差上界的加权积分；单日合约两种分布相同，预算为 0。

    Args:
        model (ReturnModel): 单位周期分布
        contract (OptionContract): 合约
        config (PricingConfig): 定价上下文
        n_points (int): [0, x_max] 上的评估点数
        n_samples (int): 构造 n-1 次卷积网格的采样点数

    Returns:
        float: 非负预算
    """
    days = contract.days_to_maturity
    if days < 2:
        return 0.0

    y = np.linspace(0.0, model.x_max, n_points)
    bound = holder_bound_nfold(model.gamma, model.m_mult, days, y, n_samples, settings)
    growth = config.daily_drift(model.gamma) * days

    def payoff(x):
        terminal = config.spot * np.exp(growth + x)
        if contract.kind is OptionKind.CALL:
            return np.maximum(terminal - contract.strike, 0.0)
        return np.maximum(contract.strike - terminal, 0.0)

    return config.discount(days) * payoff_weighted_bound(bound, payoff)
