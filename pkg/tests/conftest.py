"""
HTO 测试共用夹具
"""

import os
import sys
import tempfile

import pytest

# 日志写到临时目录，避免污染仓库
os.environ.setdefault('HT_OPTIONS_LOG_DIR', tempfile.mkdtemp(prefix='hto-logs-'))

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

from pricing_core import PricingConfig  # noqa: E402
from returns_model import ReturnModel  # noqa: E402
from spectral_engine import DensityCache, EngineSettings  # noqa: E402

FIXTURES = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'fixtures')

SMALL_SAMPLES = 2 ** 14


@pytest.fixture
def fixtures_dir():
    return FIXTURES


@pytest.fixture
def unit_model():
    """γ = 0.02, M = 100（x_max = 2）"""
    return ReturnModel.from_multiple(0.02, 100.0)


@pytest.fixture
def small_settings():
    return EngineSettings(n_samples=SMALL_SAMPLES)


@pytest.fixture
def pricing_config():
    """S = 1，年利率 2%，风险中性漂移"""
    return PricingConfig(spot=1.0, annual_rate=0.02)


@pytest.fixture(scope='module')
def shared_cache():
    return DensityCache()
