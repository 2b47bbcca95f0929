#!/usr/bin/env python3
"""
HTO (Heavy-Tailed Options) - 收益率分布模块

这个模块提供单位周期对数收益率的三自由度 Student t 分布：密度、分布函数、谱（傅里叶变换）、
截断与重新归一化，以及截断后尾部概率的上界。所有更长周期的分布都由它构造。

傅里叶约定固定为对称归一化形式：F(ω) = (1/√(2π)) ∫ p(x) e^{-iωx} dx。
"""

import math
from dataclasses import dataclass, field
from typing import Optional, Tuple, Union

import numpy as np
from scipy.integrate import trapezoid

from config_manager import setup_logger

logger = setup_logger('HTO.ReturnsModel', 'returns_log.log')

ArrayLike = Union[float, np.ndarray]

INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class DomainError(ValueError):
    """参数超出定义域"""
    pass


class DegenerateDistributionError(ValueError):
    """密度的总概率为零，无法归一化"""
    pass


def _require_gamma(gamma: float) -> None:
    if not gamma > 0:
        raise DomainError(f"gamma must be positive, got {gamma}")


@dataclass(frozen=True)
class ReturnModel:
    """单位周期截断 t(3) 分布的参数：宽度 gamma、截断半宽 x_max、截断倍数 m_mult"""

    gamma: float
    x_max: float
    m_mult: float

    def __post_init__(self):
        _require_gamma(self.gamma)
        if not self.x_max > 0:
            raise DomainError(f"x_max must be positive, got {self.x_max}")
        if abs(self.x_max - self.m_mult * self.gamma) > 1e-12 * self.x_max:
            raise DomainError(
                f"inconsistent truncation: x_max={self.x_max} but m_mult*gamma={self.m_mult * self.gamma}")

    @classmethod
    def from_multiple(cls, gamma: float, m_mult: float = 100.0) -> 'ReturnModel':
        """按截断倍数 M 构造，x_max = M·γ"""
        _require_gamma(gamma)
        return cls(gamma=gamma, x_max=m_mult * gamma, m_mult=m_mult)

    @classmethod
    def from_width(cls, gamma: float, x_max: float) -> 'ReturnModel':
        """按截断半宽构造，M = x_max/γ"""
        _require_gamma(gamma)
        return cls(gamma=gamma, x_max=x_max, m_mult=x_max / gamma)

    def with_width(self, x_max: float) -> 'ReturnModel':
        return ReturnModel.from_width(self.gamma, x_max)


@dataclass(frozen=True)
class GridSpec:
    """
    均匀采样网格的描述

    采样点为 x_j = -x_max + j·d，j = 0..n_samples-1（周期布局，中心样本 j = n_samples/2 位于 x = 0）。
    """

    n_samples: int
    x_max: float

    def __post_init__(self):
        n = self.n_samples
        if n < 2 or (n & (n - 1)) != 0:
            raise DomainError(f"n_samples must be a power of two, got {n}")
        if not self.x_max > 0:
            raise DomainError(f"x_max must be positive, got {self.x_max}")

    @property
    def spacing(self) -> float:
        return 2.0 * self.x_max / self.n_samples

    @property
    def f_max(self) -> float:
        """最高可分辨频率 1/(2d)"""
        return 1.0 / (2.0 * self.spacing)

    def nodes(self) -> np.ndarray:
        return -self.x_max + self.spacing * np.arange(self.n_samples)


@dataclass(frozen=True, eq=False)
class DensityGrid:
    """
    N 日对数收益率在 (-x_max, x_max) 上的采样密度

    rescale 记录截断后归一化所乘的因子（未归一化时为 1）；gamma 为单位周期宽度，正态网格为 None。
    """

    spec: GridSpec
    horizon_days: int
    values: np.ndarray
    rescale: float = 1.0
    law: str = field(default='student_t3')
    gamma: Optional[float] = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (self.spec.n_samples,):
            raise DomainError(
                f"grid has {values.shape} samples, expected ({self.spec.n_samples},)")
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)

    @property
    def x(self) -> np.ndarray:
        return self.spec.nodes()

    @property
    def x_max(self) -> float:
        return self.spec.x_max

    @property
    def peak(self) -> float:
        return float(self.values[self.spec.n_samples // 2])

    def closed_nodes(self) -> Tuple[np.ndarray, np.ndarray]:
        """
        闭区间 [-x_max, x_max] 上的节点和取值

        右端点的取值由对称性给出：p(x_max) = p(-x_max)。
        """
        x = np.append(self.x, self.x_max)
        p = np.append(self.values, self.values[0])
        return x, p

    def integral(self, weight: np.ndarray = None) -> float:
        """梯形法则计算 ∫ weight(x)·p(x) dx，weight 为闭区间节点上的取值"""
        x, p = self.closed_nodes()
        if weight is not None:
            p = p * weight
        return float(trapezoid(p, x))

    def evaluate(self, points: ArrayLike) -> np.ndarray:
        """线性插值求任意点的密度，窗口外为零"""
        x, p = self.closed_nodes()
        return np.interp(points, x, p, left=0.0, right=0.0)


def student_density(x: ArrayLike, gamma: float) -> ArrayLike:
    """
    t(3) 密度 2γ³/(π(γ²+x²)²)

    Args:
        x: 对数收益率（标量或数组）
        gamma (float): 宽度参数，等于标准差

    Returns:
        密度值
    """
    _require_gamma(gamma)
    x = np.asarray(x, dtype=float)
    value = 2.0 * gamma ** 3 / (math.pi * (gamma * gamma + x * x) ** 2)
    return value if value.ndim else float(value)


def student_cdf(x: ArrayLike, gamma: float) -> ArrayLike:
    """t(3) 分布函数 1/2 + [atan(u) + u/(1+u²)]/π，u = x/γ"""
    _require_gamma(gamma)
    u = np.asarray(x, dtype=float) / gamma
    value = 0.5 + (np.arctan(u) + u / (1.0 + u * u)) / math.pi
    return value if value.ndim else float(value)


def student_tail(a: ArrayLike, gamma: float) -> ArrayLike:
    """右尾概率 ∫_a^∞ p_S dx"""
    _require_gamma(gamma)
    u = np.asarray(a, dtype=float) / gamma
    # 对大 u 直接相减会损失精度，改用 atan 的余角形式
    value = (np.arctan2(1.0, u) - u / (1.0 + u * u)) / math.pi
    return value if value.ndim else float(value)


def student_spectrum(omega: ArrayLike, gamma: float) -> ArrayLike:
    """t(3) 的谱 (1/√(2π))·(1+γ|ω|)·e^{-γ|ω|}"""
    return convolution_spectrum(omega, gamma, 1)


def convolution_spectrum(omega: ArrayLike, gamma: float, n_days: int) -> ArrayLike:
    """
    N 次卷积的谱 (1/√(2π))·(1+γ|ω|)^N·e^{-Nγ|ω|}

    Args:
        omega: 角频率
        gamma (float): 单位周期宽度
        n_days (int): 卷积次数 N

    Returns:
        谱值
    """
    _require_gamma(gamma)
    if int(n_days) != n_days or n_days < 1:
        raise DomainError(f"n_days must be a positive integer, got {n_days}")
    g = gamma * np.abs(np.asarray(omega, dtype=float))
    # 以对数形式求幂，大 N 时不溢出
    value = INV_SQRT_2PI * np.exp(n_days * (np.log1p(g) - g))
    return value if value.ndim else float(value)


def tail_mass_bound(m_mult: float) -> float:
    """截断在 ±Mγ 之外的概率上界 4/(3πM³)"""
    if not m_mult >= 1:
        raise DomainError(f"tail bound needs m_mult >= 1, got {m_mult}")
    return 4.0 / (3.0 * math.pi * m_mult ** 3)


def exact_tail_mass(m_mult: float) -> float:
    """截断在 ±Mγ 之外的精确概率（与 γ 无关）"""
    if not m_mult > 0:
        raise DomainError(f"m_mult must be positive, got {m_mult}")
    return 2.0 * student_tail(m_mult, 1.0)


def truncated_variance(gamma: float, x_max: float) -> float:
    """截断并归一化后的单位周期方差 (2γ²/π)[atan M - M/(1+M²)]/(1-尾部概率)"""
    _require_gamma(gamma)
    m = x_max / gamma
    inside = 2.0 * gamma ** 2 / math.pi * (math.atan(m) - m / (1.0 + m * m))
    return inside / (1.0 - exact_tail_mass(m))


def truncate_and_renormalize(grid: DensityGrid) -> DensityGrid:
    """
    截断并按梯形权重重新归一化

    网格本身就是 (-x_max, x_max) 上的样本，端点计入（闭区间）。

    Args:
        grid (DensityGrid): 非负的采样密度

    Returns:
        DensityGrid: 总概率为 1 的网格，rescale 为所乘因子
    """
    if np.any(grid.values < 0):
        raise DomainError("density samples must be nonnegative before renormalization")

    mass = grid.integral()
    if not mass > 0:
        raise DegenerateDistributionError(
            f"grid for horizon {grid.horizon_days} carries no probability mass")

    factor = 1.0 / mass
    logger.debug(f"Renormalized horizon {grid.horizon_days}: mass={mass:.12g}, factor={factor:.12g}")
    return DensityGrid(spec=grid.spec, horizon_days=grid.horizon_days,
                       values=grid.values * factor, rescale=grid.rescale * factor,
                       law=grid.law, gamma=grid.gamma)
