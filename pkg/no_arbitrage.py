#!/usr/bin/env python3
"""
HTO (Heavy-Tailed Options) - 无套利检验模块

风险中性漂移取 μ = r - γ²/2 时，贴现后的期望价格只在二次近似意义下是鞅。
这个模块用与定价相同的密度网格计算矩母函数 ∫ e^x p_T(x) dx，并报告它相对 e^{Tγ²/2} 的偏差。
"""

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Iterable, List, Optional

import numpy as np

from config_manager import resolve_threads, setup_logger
from pricing_core import PricingConfig
from returns_model import DomainError, ReturnModel
from spectral_engine import DensityCache, EngineSettings, build_density

logger = setup_logger('HTO.NoArbitrage', 'no_arbitrage_log.log')


@dataclass(frozen=True)
class MartingaleReport:
    """
    单个周期的矩母函数偏差

    Attributes:
        horizon_days: 周期 T（交易日）
        mgf: ∫ e^x p_T(x) dx，积分区间为截断窗口
        quadratic_approx: e^{Tγ²/2}
        relative_defect: (mgf - quadratic_approx)/mgf
        excess_defect: (mgf - quadratic_approx)/(mgf - 1)，相对于增长部分的偏差
    """

    horizon_days: int
    mgf: float
    quadratic_approx: float
    relative_defect: float
    excess_defect: float

    def as_row(self) -> dict:
        return asdict(self)


def risk_neutral_drift(gamma: float, annual_rate: float, trading_days: int = 252) -> float:
    """
    每日风险中性漂移 μ = r/trading_days - γ²/2

    Args:
        gamma (float): 单位周期宽度（允许为 0）
        annual_rate (float): 年化利率
        trading_days (int): 每年交易日数

    Returns:
        float: 每日漂移
    """
    if gamma < 0:
        raise DomainError(f"gamma must be nonnegative, got {gamma}")
    if trading_days <= 0:
        raise DomainError(f"trading_days must be positive, got {trading_days}")
    return annual_rate / trading_days - 0.5 * gamma * gamma


def mgf_residual(model: ReturnModel,
                 horizon_days: int,
                 n_samples: int = 2 ** 18,
                 settings: Optional[EngineSettings] = None,
                 cache: Optional[DensityCache] = None) -> MartingaleReport:
    """
    计算周期 T 的矩母函数偏差

    Args:
        model (ReturnModel): 单位周期分布
        horizon_days (int): 周期 T
        n_samples (int): 网格采样点数
        settings (EngineSettings): 数值设置
        cache (DensityCache): 可选缓存，与定价共用同一网格

    Returns:
        MartingaleReport: 偏差报告
    """
    grid = build_density(model, horizon_days, n_samples, settings, cache)
    x, _ = grid.closed_nodes()
    mgf = grid.integral(np.exp(x))
    approx = math.exp(0.5 * horizon_days * model.gamma ** 2)

    excess = mgf - 1.0
    report = MartingaleReport(
        horizon_days=int(horizon_days),
        mgf=mgf,
        quadratic_approx=approx,
        relative_defect=(mgf - approx) / mgf,
        excess_defect=(mgf - approx) / excess if excess != 0 else 0.0,
    )
    logger.info(f"MGF horizon={horizon_days}: mgf={mgf:.12g}, approx={approx:.12g}, "
                f"defect={report.relative_defect:.3e}")
    return report


def discounted_expectation_defect(report: MartingaleReport, gamma: float, config: PricingConfig) -> float:
    """
    e^{-rτ} E[S_T]/S_t - 1，即在给定漂移下贴现价格偏离鞅性质的程度

    Args:
        report (MartingaleReport): 同一周期的 MGF 报告
        gamma (float): 单位周期宽度
        config (PricingConfig): 定价上下文（利率与漂移约定）

    Returns:
        float: 相对偏差
    """
    days = report.horizon_days
    growth = (config.daily_drift(gamma) - config.daily_rate) * days
    return math.exp(growth) * report.mgf - 1.0


def martingale_table(model: ReturnModel,
                     horizons: Iterable[int],
                     n_samples: int = 2 ** 18,
                     settings: Optional[EngineSettings] = None,
                     cache: Optional[DensityCache] = None,
                     threads: Optional[int] = None) -> List[MartingaleReport]:
    """
    多个周期的 MGF 偏差表，各周期并发计算，结果按输入顺序排列

    Args:
        model (ReturnModel): 单位周期分布
        horizons: 周期列表
        n_samples (int): 网格采样点数
        settings (EngineSettings): 数值设置
        cache (DensityCache): 可选缓存
        threads (int): 线程数

    Returns:
        List[MartingaleReport]: 每个周期一行
    """
    horizons = [int(h) for h in horizons]
    cache = cache if cache is not None else DensityCache()
    with ThreadPoolExecutor(max_workers=resolve_threads(threads)) as pool:
        return list(pool.map(lambda h: mgf_residual(model, h, n_samples, settings, cache), horizons))


def reports_to_json(reports: Iterable[MartingaleReport]) -> str:
    """序列化为 JSON 行数组 (horizon, mgf, approx, defect)"""
    rows = [report.as_row() for report in reports]
    return json.dumps(rows, indent=2, ensure_ascii=False)
