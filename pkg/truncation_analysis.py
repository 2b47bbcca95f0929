#!/usr/bin/env python3
"""
HTO (Heavy-Tailed Options) - 截断分析模块

这个模块做两件事：
1. 平台扫描：在一组截断半宽 x_max 上重新构造密度并定价，观察价格对截断点不敏感的区间；
2. 先卷积后截断与先截断后卷积之间误差的 Hölder 上界，以及 n = 2 时的直接数值误差。
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, TextIO, Tuple, Union

import numpy as np
import pandas as pd
from scipy.integrate import quad, trapezoid

from config_manager import resolve_threads, setup_logger
from pricing_core import OptionContract, OptionKind, PricingConfig, price_call
from returns_model import DomainError, ReturnModel, student_density, student_tail
from spectral_engine import EngineSettings, HorizonUnavailableError, build_density

logger = setup_logger('HTO.TruncationAnalysis', 'truncation_log.log')

MIN_WIDTH_MULTIPLE = 10.0

# 写入运行清单，说明倾斜度的口径
INCLINATION_NOTE = ('delta = (C - C_mid)/C_mid for every row; the reference plateau table is not reproduced '
                    'under the rn, explicit:0 or explicit:r/252 drift conventions')


@dataclass(frozen=True, eq=False)
class PlateauScan:
    """
    价格随截断半宽变化的扫描结果

    prices[i, j] 对应 horizons[i] 与 x_max_values[j]；无法定价的格子为 NaN，原因记录在 failures 中。
    """

    gamma: float
    strike_ratio: float
    horizons: Tuple[int, ...]
    x_max_values: Tuple[float, ...]
    prices: np.ndarray
    failures: Dict[Tuple[int, float], str] = field(default_factory=dict)
    drift: str = 'rn'

    def price(self, horizon: int, x_max: float) -> float:
        return float(self.prices[self.horizons.index(horizon), self._column(x_max)])

    def _column(self, x_max: float) -> int:
        matches = np.flatnonzero(np.isclose(self.x_max_values, x_max, rtol=1e-9, atol=0.0))
        if matches.size == 0:
            raise DomainError(f"x_max={x_max} is not part of the scan")
        return int(matches[0])


@dataclass(frozen=True)
class InclinationRow:
    """平台倾斜度：三个截断点的价格及相对中点的相对差"""
    horizon_days: int
    c_left: float
    c_mid: float
    c_right: float
    delta_left: float
    delta_right: float


@dataclass(frozen=True)
class ConvErrorBound:
    """
    n 次卷积排序误差的上界

    Attributes:
        n_convolutions: 卷积次数 n
        y_points: 评估点
        bound: 绝对误差上界 ε_n(y)
        relative_bound: ε_n(y)/p^{(n)}(y)
    """

    n_convolutions: int
    y_points: np.ndarray
    bound: np.ndarray
    relative_bound: np.ndarray


def log_spaced_grid(text: str) -> np.ndarray:
    """
    解析截断半宽列表

    Args:
        text (str): 'log:a:b:n'（a 到 b 之间 n 个对数等距点）或逗号分隔的数值

    Returns:
        np.ndarray: 严格递增的数组
    """
    text = text.strip()
    try:
        if text.startswith('log:'):
            _, low, high, count = text.split(':')
            values = np.geomspace(float(low), float(high), int(count))
        else:
            values = np.array([float(part) for part in text.split(',') if part.strip()])
    except ValueError as e:
        raise DomainError(f"cannot parse grid {text!r}: {e}") from e

    if values.size == 0:
        raise DomainError("grid is empty")
    if np.any(values <= 0) or np.any(np.diff(values) <= 0):
        raise DomainError(f"grid must be positive and strictly increasing: {text!r}")
    return values


def _price_cell(gamma: float, x_max: float, horizon: int, strike: float,
                config: PricingConfig, n_samples: int, settings: Optional[EngineSettings]):
    model = ReturnModel.from_width(gamma, x_max)
    try:
        grid = build_density(model, horizon, n_samples, settings)
    except HorizonUnavailableError as e:
        return math.nan, str(e)
    contract = OptionContract(strike, horizon, OptionKind.CALL)
    return price_call(grid, contract, config).price, None


def plateau_scan(gamma: float,
                 strike_ratio: float,
                 horizons: Sequence[int],
                 x_max_list: Sequence[float],
                 config: PricingConfig,
                 n_samples: int = 2 ** 18,
                 settings: Optional[EngineSettings] = None,
                 threads: Optional[int] = None) -> PlateauScan:
    """
    在每个 (周期, x_max) 格子上重建密度并计算看涨期权价格

    Args:
        gamma (float): 单位周期宽度
        strike_ratio (float): K/S
        horizons: 周期列表
        x_max_list: 严格递增的截断半宽
        config (PricingConfig): 定价上下文
        n_samples (int): 每个格子的采样点数（间距随 x_max 变化）
        settings (EngineSettings): 数值设置
        threads (int): 线程数

    Returns:
        PlateauScan: 扫描结果，失败格子记为缺失
    """
    if not horizons:
        raise DomainError("at least one horizon is required")
    if not strike_ratio > 0:
        raise DomainError(f"strike_ratio must be positive, got {strike_ratio}")
    widths = np.asarray(x_max_list, dtype=float)
    if widths.size == 0 or np.any(np.diff(widths) <= 0):
        raise DomainError("x_max values must be strictly increasing")
    if widths[0] < MIN_WIDTH_MULTIPLE * gamma:
        raise DomainError(f"x_max={widths[0]} does not resolve the unit density (needs >= {MIN_WIDTH_MULTIPLE}·gamma)")

    horizons = tuple(int(h) for h in horizons)
    strike = strike_ratio * config.spot
    cells = [(h, float(w)) for h in horizons for w in widths]

    with ThreadPoolExecutor(max_workers=resolve_threads(threads)) as pool:
        results = list(pool.map(
            lambda cell: _price_cell(gamma, cell[1], cell[0], strike, config, n_samples, settings), cells))

    prices = np.array([price for price, _ in results]).reshape(len(horizons), widths.size)
    failures = {cell: reason for cell, (_, reason) in zip(cells, results) if reason is not None}
    for (h, w), reason in failures.items():
        logger.warning(f"Plateau cell horizon={h}, x_max={w:.6g} missing: {reason}")

    logger.info(f"Plateau scan K/S={strike_ratio}: {len(cells)} cells, {len(failures)} missing")
    return PlateauScan(gamma=gamma, strike_ratio=strike_ratio, horizons=horizons,
                       x_max_values=tuple(float(w) for w in widths), prices=prices,
                       failures=failures, drift=config.describe_drift())


def plateau_inclination(scan: PlateauScan, left_x: float, mid_x: float, right_x: float) -> List[InclinationRow]:
    """
    平台倾斜度表

    所有行的 Δ 都是相对差 (C - C_mid)/C_mid（价内与价外口径一致），C_mid 为零时记为 NaN。

    Args:
        scan (PlateauScan): 扫描结果
        left_x, mid_x, right_x: 扫描中包含的三个截断半宽

    Returns:
        List[InclinationRow]: 每个周期一行
    """
    rows = []
    for horizon in scan.horizons:
        left, mid, right = (scan.price(horizon, x) for x in (left_x, mid_x, right_x))
        delta_left = (left - mid) / mid if mid > 0 else math.nan
        delta_right = (right - mid) / mid if mid > 0 else math.nan
        rows.append(InclinationRow(horizon, left, mid, right, delta_left, delta_right))
    return rows


def _check_offsets(gamma: float, m_mult: float, y: np.ndarray) -> float:
    if not gamma > 0 or not m_mult >= 1:
        raise DomainError(f"need gamma > 0 and m_mult >= 1, got gamma={gamma}, m_mult={m_mult}")
    edge = m_mult * gamma
    if np.any(y < 0) or np.any(y > edge * (1 + 1e-12)):
        raise DomainError(f"y must lie within [0, {edge}]")
    return edge


def density_cap(gamma: float, m_mult: float) -> float:
    """截断点之外 t(3) 密度的上界 2/(πγM⁴)"""
    return 2.0 / (math.pi * gamma * m_mult ** 4)


def holder_bound_pairwise(gamma: float, m_mult: float, y: Union[float, np.ndarray]):
    """
    两次卷积排序误差的上界 2·[2/(πγM⁴)]·∫_{Mγ-y}^∞ p_S dx

    Args:
        gamma (float): 单位周期宽度
        m_mult (float): 截断倍数 M
        y: 评估点，0 ≤ y ≤ Mγ

    Returns:
        上界（标量或数组）
    """
    y_arr = np.asarray(y, dtype=float)
    edge = _check_offsets(gamma, m_mult, y_arr)
    value = 2.0 * density_cap(gamma, m_mult) * np.asarray(student_tail(edge - y_arr, gamma))
    return value if value.ndim else float(value)


def holder_bound_nfold(gamma: float,
                       m_mult: float,
                       n: int,
                       y_grid: Sequence[float],
                       n_samples: int = 2 ** 16,
                       settings: Optional[EngineSettings] = None) -> ConvErrorBound:
    """
    n 次卷积排序误差的上界

    第二个因子 ∫_{Mγ-y}^∞ p^{(n-1)} dx 在窗口内用 n-1 次卷积的网格样本（未归一化）积分，
    窗口之外的部分用 (n-1)·P(X > Mγ) 估计。n = 2 时窗口内的积分直接用 t(3) 分布函数。

    Args:
        gamma (float): 单位周期宽度
        m_mult (float): 截断倍数 M
        n (int): 卷积次数，n ≥ 2
        y_grid: 评估点，位于 [0, Mγ]
        n_samples (int): 网格采样点数
        settings (EngineSettings): 数值设置

    Returns:
        ConvErrorBound: 绝对与相对上界
    """
    if int(n) != n or n < 2:
        raise DomainError(f"n must be an integer >= 2, got {n}")
    y = np.asarray(y_grid, dtype=float)
    edge = _check_offsets(gamma, m_mult, y)
    model = ReturnModel.from_multiple(gamma, m_mult)

    outside = (n - 1) * student_tail(edge, gamma)
    if n == 2:
        # 单日密度的尾部积分有闭式
        inside = np.asarray(student_tail(edge - y, gamma)) - student_tail(edge, gamma)
    else:
        previous = build_density(model, int(n) - 1, n_samples, settings)
        x, p = previous.closed_nodes()
        p = p / previous.rescale

        # 累积积分 ∫_x^{Mγ} p，再在 Mγ - y 处线性插值
        upper = np.concatenate(([0.0], np.cumsum(0.5 * (p[1:] + p[:-1]) * np.diff(x))))
        upper = upper[-1] - upper
        inside = np.interp(edge - y, x, upper)

    bound = 2.0 * density_cap(gamma, m_mult) * (inside + outside)
    target = build_density(model, int(n), n_samples, settings).evaluate(y)
    with np.errstate(divide='ignore'):
        relative = np.where(target > 0, bound / np.where(target > 0, target, 1.0), np.inf)

    logger.info(f"Holder bound n={n}: max relative {float(np.max(relative)):.3e} over {y.size} points")
    return ConvErrorBound(n_convolutions=int(n), y_points=y, bound=bound, relative_bound=relative)


def direct_pairwise_error(gamma: float, m_mult: float, y: float) -> float:
    """
    n = 2 时排序误差的直接计算

    (-Mγ, Mγ) 内的 p^{(2)}(y) 与两个截断密度卷积之差为 2∫_{Mγ}^∞ p_S(x) p_S(y-x) dx（0 ≤ y ≤ Mγ）。

    Args:
        gamma (float): 单位周期宽度
        m_mult (float): 截断倍数 M
        y (float): 评估点

    Returns:
        float: 误差
    """
    edge = _check_offsets(gamma, m_mult, np.asarray(y, dtype=float))

    def integrand(x):
        return student_density(x, gamma) * student_density(y - x, gamma)

    split = edge + 50.0 * gamma
    near, _ = quad(integrand, edge, split, epsabs=0.0, epsrel=1e-10, limit=200)
    far, _ = quad(integrand, split, np.inf, epsabs=0.0, epsrel=1e-10, limit=200)
    return 2.0 * (near + far)


def payoff_weighted_bound(bound: ConvErrorBound, payoff) -> float:
    """∫ payoff(y)·ε_n(|y|) dy 在 (-Mγ, Mγ) 上的梯形积分"""
    y = bound.y_points
    full_y = np.concatenate((-y[:0:-1], y))
    full_eps = np.concatenate((bound.bound[:0:-1], bound.bound))
    return float(trapezoid(payoff(full_y) * full_eps, full_y))


def scan_to_csv(scan: PlateauScan, path_or_buf: Union[str, TextIO]) -> None:
    """导出 (x_max, horizon, price) 三列 CSV；缺失格子价格为空"""
    rows = [{'x_max': w, 'horizon': h, 'price': scan.prices[i, j]}
            for i, h in enumerate(scan.horizons) for j, w in enumerate(scan.x_max_values)]
    pd.DataFrame(rows, columns=['x_max', 'horizon', 'price']).to_csv(
        path_or_buf, index=False, float_format='%.17g')


def bounds_to_csv(bound: ConvErrorBound, path_or_buf: Union[str, TextIO]) -> None:
    """导出 (y, bound, relative_bound) CSV"""
    pd.DataFrame({'y': bound.y_points, 'bound': bound.bound,
                  'relative_bound': bound.relative_bound}).to_csv(
        path_or_buf, index=False, float_format='%.17g')
