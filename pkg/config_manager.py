#!/usr/bin/env python3
"""
HTO (Heavy-Tailed Options) - 配置管理模块

这个模块负责引擎默认参数的加载、各组件日志的统一配置，以及工作线程数的解析。
"""

import json
import os
import logging
from typing import Dict, Any, Optional


LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def setup_logger(name: str, log_file: str, level: int = logging.INFO) -> logging.Logger:
    """
    创建带文件处理器的组件日志记录器

    Args:
        name (str): 日志记录器名称，例如 'HTO.SpectralEngine'
        log_file (str): 日志文件名（写入日志目录）
        level (int): 日志级别

    Returns:
        logging.Logger: 配置好的日志记录器
    """
    logger = logging.getLogger(name)
    logger.setLevel(level)

    # 清除现有的处理器
    if logger.handlers:
        logger.handlers.clear()

    log_dir = os.environ.get('HT_OPTIONS_LOG_DIR',
                             os.path.join(os.path.dirname(os.path.abspath(__file__)), 'logs'))
    try:
        os.makedirs(log_dir, exist_ok=True)
        # 创建文件处理器 - 使用覆盖模式('w')
        handler: logging.Handler = logging.FileHandler(
            os.path.join(log_dir, log_file), mode='w', encoding='utf-8')
    except OSError:
        # 只读环境下退回到空处理器
        handler = logging.NullHandler()

    handler.setLevel(level)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    logger.addHandler(handler)
    return logger


logger = setup_logger('HTO.ConfigManager', 'config_log.log')


def resolve_threads(requested: Optional[int] = None) -> int:
    """
    解析工作线程数

    优先级：显式参数 > 环境变量 HT_OPTIONS_THREADS > 自动。0 表示自动（CPU核数）。

    Args:
        requested (Optional[int]): 显式请求的线程数

    Returns:
        int: 实际使用的线程数（至少为1）
    """
    if requested is None:
        raw = os.environ.get('HT_OPTIONS_THREADS', '0')
        try:
            requested = int(raw)
        except ValueError:
            logger.warning(f"Invalid HT_OPTIONS_THREADS value: {raw!r}, using auto")
            requested = 0

    threads = requested if requested > 0 else (os.cpu_count() or 1)
    return max(1, threads)


class ConfigManager:
    """配置管理器，用于加载引擎默认参数"""

    def __init__(self, config_file: str = "ht_options_config.json"):
        """
        初始化配置管理器

        Args:
            config_file: 配置文件路径
        """
        self.config_file = config_file
        self.default_config: Dict[str, Any] = {
            'gamma': 0.02,
            'm_mult': 100.0,
            'n_samples': 2 ** 18,
            'annual_rate': 0.02,
            'trading_days_per_year': 252,
            'drift_mode': 'rn',
            'oversampling': 4,
            'edge_threshold': 1e-3,
            'negative_tolerance': 1e-6,
            'threads': 0,
            'mc_paths': 1_000_000,
            'mc_seed': 20180228,
            'calibration_bracket': [0.001, 0.1],
        }

    def load_config(self) -> Dict[str, Any]:
        """
        加载配置文件

        Returns:
            配置字典
        """
        if os.path.exists(self.config_file):
            try:
                with open(self.config_file, 'r', encoding='utf-8') as f:
                    config = json.load(f)
                # 确保所有必需的键都存在
                for key, value in self.default_config.items():
                    if key not in config:
                        config[key] = value
                return config
            except (json.JSONDecodeError, IOError) as e:
                logger.warning(f"Failed to read {self.config_file}: {e}; using defaults")
                return dict(self.default_config)
        return dict(self.default_config)

