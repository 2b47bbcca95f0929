#!/usr/bin/env python3
"""
HTO (Heavy-Tailed Options) - 谱方法密度引擎

这个模块在频率网格上求 N 次卷积谱的闭式值，通过逆离散傅里叶变换得到 N 日对数收益率的采样密度，
随后截断到 (-x_max, x_max) 并重新归一化。每个周期只需要一次逆变换。
"""

import math
import threading
from dataclasses import dataclass
from typing import Any, Callable, Dict, Mapping, Optional, Tuple

import numpy as np
import pandas as pd

from config_manager import setup_logger
from returns_model import (DensityGrid, DomainError, GridSpec, ReturnModel,
                           convolution_spectrum, truncate_and_renormalize)

logger = setup_logger('HTO.SpectralEngine', 'spectral_log.log')

SQRT_2PI = math.sqrt(2.0 * math.pi)
MIN_SAMPLES = 2 ** 10
MAX_MOMENT_ORDER = 8


class HorizonUnavailableError(RuntimeError):
    """重建的密度出现混叠迹象（负值或窗口边缘质量过大），该周期无法定价"""

    def __init__(self, horizon_days: int, edge_ratio: float, negative_ratio: float, reason: str):
        self.horizon_days = horizon_days
        self.edge_ratio = edge_ratio
        self.negative_ratio = negative_ratio
        super().__init__(f"horizon unavailable ({horizon_days} days): {reason}")


@dataclass(frozen=True)
class EngineSettings:
    """
    逆变换的数值设置

    Attributes:
        n_samples: 窗口内的采样点数 N_s（2 的幂）
        oversampling: 逆变换在放大 oversampling 倍的窗口上进行（间距不变），再裁剪回原窗口
        edge_threshold: 窗口边缘密度与峰值之比的上限
        negative_tolerance: 允许被截为零的负值幅度（相对峰值）
    """

    n_samples: int = 2 ** 18
    oversampling: int = 4
    edge_threshold: float = 1e-3
    negative_tolerance: float = 1e-6

    def __post_init__(self):
        if self.oversampling < 1 or (self.oversampling & (self.oversampling - 1)) != 0:
            raise DomainError(f"oversampling must be a power of two, got {self.oversampling}")

    @classmethod
    def from_settings(cls, settings: Mapping[str, Any]) -> 'EngineSettings':
        return cls(n_samples=int(settings.get('n_samples', cls.n_samples)),
                   oversampling=int(settings.get('oversampling', cls.oversampling)),
                   edge_threshold=float(settings.get('edge_threshold', cls.edge_threshold)),
                   negative_tolerance=float(settings.get('negative_tolerance', cls.negative_tolerance)))

    def with_samples(self, n_samples: int) -> 'EngineSettings':
        return EngineSettings(n_samples, self.oversampling, self.edge_threshold, self.negative_tolerance)


def gaussian_spectrum(omega: np.ndarray, sigma: float) -> np.ndarray:
    """正态分布在同一约定下的谱 e^{-σ²ω²/2}/√(2π)"""
    if not sigma > 0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    omega = np.asarray(omega, dtype=float)
    return np.exp(-0.5 * (sigma * omega) ** 2) / SQRT_2PI


def build_density_from_spectrum(spectrum: Callable[[np.ndarray], np.ndarray],
                                horizon_days: int,
                                spec: GridSpec,
                                settings: Optional[EngineSettings] = None,
                                law: str = 'student_t3',
                                gamma: Optional[float] = None) -> DensityGrid:
    """
    由闭式谱重建采样密度

    Args:
        spectrum: 对称约定下的谱函数 F(ω)
        horizon_days (int): 周期天数（仅用于记录）
        spec (GridSpec): 目标窗口
        settings (EngineSettings): 数值设置
        law (str): 分布名称
        gamma (float): 单位周期宽度，随网格记录

    Returns:
        DensityGrid: 截断并归一化后的密度

    Raises:
        HorizonUnavailableError: 混叠检查失败
    """
    settings = settings or EngineSettings(n_samples=spec.n_samples)
    n = spec.n_samples
    total = n * settings.oversampling
    d = spec.spacing

    omega = 2.0 * math.pi * np.fft.fftfreq(total, d=d)
    char_fn = SQRT_2PI * spectrum(omega)
    # ifft 已含 1/L；除以 d 得到密度，fftshift 后下标 L/2 对应 x = 0
    full = np.fft.fftshift(np.fft.ifft(char_fn).real) / d

    start = total // 2 - n // 2
    window = full[start:start + n]

    peak = float(window.max())
    if not peak > 0:
        raise HorizonUnavailableError(horizon_days, math.inf, math.inf, "non-positive reconstruction")

    negative_ratio = max(0.0, -float(window.min())) / peak
    edge_ratio = float(window[0]) / peak

    if negative_ratio > settings.negative_tolerance:
        logger.warning(f"Horizon {horizon_days}: negative excursion {negative_ratio:.3e} of peak")
        raise HorizonUnavailableError(horizon_days, edge_ratio, negative_ratio,
                                      f"negative excursion {negative_ratio:.3e} of peak")
    if edge_ratio > settings.edge_threshold:
        logger.warning(f"Horizon {horizon_days}: edge/peak {edge_ratio:.3e} above {settings.edge_threshold:.1e}")
        raise HorizonUnavailableError(horizon_days, edge_ratio, negative_ratio,
                                      f"edge/peak {edge_ratio:.3e} exceeds {settings.edge_threshold:.1e}")

    window = np.clip(window, 0.0, None)
    raw = DensityGrid(spec=spec, horizon_days=horizon_days, values=window, law=law, gamma=gamma)
    grid = truncate_and_renormalize(raw)

    logger.debug(f"Built {law} density: horizon={horizon_days}, N_s={n}, x_max={spec.x_max}, "
                 f"edge/peak={edge_ratio:.3e}, rescale={grid.rescale:.12g}")
    return grid


def build_density(model: ReturnModel,
                  horizon_days: int,
                  n_samples: int = 2 ** 18,
                  settings: Optional[EngineSettings] = None,
                  cache: Optional['DensityCache'] = None) -> DensityGrid:
    """
    构造 N 日截断 t(3) 卷积密度

    Args:
        model (ReturnModel): 单位周期分布参数
        horizon_days (int): 周期 N
        n_samples (int): 采样点数 N_s，不小于 2^10
        settings (EngineSettings): 数值设置；其中的 n_samples 会被参数覆盖
        cache (DensityCache): 可选的周期缓存

    Returns:
        DensityGrid: 截断并归一化后的 N 日密度
    """
    if int(horizon_days) != horizon_days or horizon_days < 1:
        raise DomainError(f"horizon_days must be a positive integer, got {horizon_days}")
    if n_samples < MIN_SAMPLES:
        raise DomainError(f"n_samples must be at least {MIN_SAMPLES}, got {n_samples}")

    settings = (settings or EngineSettings()).with_samples(n_samples)
    key = (model.gamma, model.x_max, n_samples, int(horizon_days), settings)

    if cache is not None:
        cached = cache.get(key)
        if cached is not None:
            return cached

    spec = GridSpec(n_samples=n_samples, x_max=model.x_max)
    grid = build_density_from_spectrum(
        lambda omega: convolution_spectrum(omega, model.gamma, int(horizon_days)),
        int(horizon_days), spec, settings, gamma=model.gamma)

    if cache is not None:
        cache.put(key, grid)
    return grid


def density_moment(grid: DensityGrid, order: int) -> float:
    """梯形法则计算 ∫ x^k p(x) dx"""
    if order < 0 or order > MAX_MOMENT_ORDER:
        raise DomainError(f"moment order must be within 0..{MAX_MOMENT_ORDER}, got {order}")
    x, _ = grid.closed_nodes()
    return grid.integral(x ** order)


class DensityCache:
    """按 (γ, x_max, N_s, 周期, 设置) 缓存密度网格；读取无锁，写入互斥"""

    def __init__(self):
        self._grids: Dict[Tuple, DensityGrid] = {}
        self._lock = threading.Lock()

    def get(self, key: Tuple) -> Optional[DensityGrid]:
        return self._grids.get(key)

    def put(self, key: Tuple, grid: DensityGrid) -> DensityGrid:
        with self._lock:
            # 并发构建时保留先写入者
            return self._grids.setdefault(key, grid)

    def __len__(self) -> int:
        return len(self._grids)


def export_density_csv(grid: DensityGrid, path: str) -> None:
    """导出两列 CSV (x, p)，用于外部绘图"""
    x, p = grid.closed_nodes()
    pd.DataFrame({'x': x, 'p': p}).to_csv(path, index=False, float_format='%.17g')
    logger.info(f"Exported horizon {grid.horizon_days} density to {path}")
