#!/usr/bin/env python3
"""
HTO (Heavy-Tailed Options) - 行情数据模块

这个模块负责解析期权链快照CSV文件，计算中间价，过滤零买价和交叉报价，并按标的/到期日分组。
"""

import json
import math
from dataclasses import dataclass, field
from datetime import date
from typing import Any, Dict, Iterable, List, Optional, Sequence, TextIO, Tuple, Union

import numpy as np
import pandas as pd

from config_manager import setup_logger
from pricing_core import OptionKind
from returns_model import DomainError

logger = setup_logger('HTO.MarketData', 'market_log.log')

REQUIRED_COLUMNS = ('symbol', 'quote_date', 'expiry_date', 'strike', 'type',
                    'bid', 'ask', 'volume', 'open_interest')

KIND_ALIASES = {
    'call': OptionKind.CALL, 'c': OptionKind.CALL,
    'put': OptionKind.PUT, 'p': OptionKind.PUT,
}


class MissingColumnError(ValueError):
    """CSV缺少必需的列"""
    pass


@dataclass(frozen=True)
class QuoteRecord:
    """单条期权报价（综合报价）"""

    symbol: str
    quote_date: date
    expiry_date: date
    strike: float
    kind: OptionKind
    bid: float
    ask: float
    volume: int = 0
    open_interest: int = 0

    def __post_init__(self):
        if not self.bid > 0:
            raise DomainError(f"bid must be positive, got {self.bid}")
        if self.ask < self.bid:
            raise DomainError(f"ask {self.ask} below bid {self.bid}")
        if not self.strike > 0:
            raise DomainError(f"strike must be positive, got {self.strike}")

    @property
    def mid(self) -> float:
        return 0.5 * (self.bid + self.ask)


@dataclass(frozen=True)
class Rejection:
    """被拒绝的行：行号（含表头，从1开始）、原因与原始内容"""
    line: int
    reason: str
    raw: Dict[str, Any]


@dataclass(frozen=True)
class Chain:
    """同一标的、报价日、到期日与期权类型的报价集合，按行权价严格递增"""

    symbol: str
    quote_date: date
    expiry_date: date
    days_to_maturity: int
    kind: OptionKind
    quotes: Tuple[QuoteRecord, ...] = field(default_factory=tuple)

    @property
    def strikes(self) -> List[float]:
        return [q.strike for q in self.quotes]

    @property
    def mids(self) -> List[float]:
        return [q.mid for q in self.quotes]


def trading_days_between(quote_date: date, expiry_date: date,
                         holidays: Optional[Sequence[date]] = None) -> int:
    """
    两个日期之间的交易日数（工作日，不含到期日当天）

    Args:
        quote_date (date): 报价日
        expiry_date (date): 到期日
        holidays: 可选的节假日列表

    Returns:
        int: 正整数交易日数
    """
    if expiry_date <= quote_date:
        raise DomainError(f"expiry {expiry_date} is not after quote date {quote_date}")
    days = int(np.busday_count(quote_date, expiry_date, holidays=list(holidays or [])))
    if days < 1:
        raise DomainError(f"no trading days between {quote_date} and {expiry_date}")
    return days


class ChainParser:
    """期权链解析器类 - 用于解析期权链快照CSV文件"""

    def __init__(self):
        """初始化解析器"""
        self.reset()

    def reset(self):
        """
        重置解析器状态
        """
        self.records: List[QuoteRecord] = []
        self.rejections: List[Rejection] = []

    def _reject(self, line: int, reason: str, raw: Dict[str, Any]) -> None:
        self.rejections.append(Rejection(line, reason, raw))
        logger.warning(f"Rejected line {line}: {reason}")

    def parse(self, source: Union[str, TextIO]) -> Tuple[List[QuoteRecord], List[Rejection]]:
        """
        解析期权链CSV

        Args:
            source: 文件路径或文本流

        Returns:
            (记录列表, 拒绝记录列表)

        Raises:
            MissingColumnError: 缺少必需列
        """
        self.reset()
        frame = pd.read_csv(source, dtype=str, keep_default_na=False, skipinitialspace=True)
        frame.columns = [str(c).strip() for c in frame.columns]

        missing = [c for c in REQUIRED_COLUMNS if c not in frame.columns]
        if missing:
            raise MissingColumnError(f"missing required column(s): {', '.join(missing)}")

        numbers = frame[['strike', 'bid', 'ask', 'volume', 'open_interest']].apply(
            pd.to_numeric, errors='coerce')
        dates = frame[['quote_date', 'expiry_date']].apply(
            pd.to_datetime, format='%Y-%m-%d', errors='coerce')

        for index, raw in frame.iterrows():
            line = int(index) + 2
            row = numbers.loc[index]
            reason = self._malformed_reason(raw, row, dates.loc[index])
            if reason is not None:
                self._reject(line, reason, raw.to_dict())
                continue
            if row['bid'] == 0:
                self._reject(line, "zero bid", raw.to_dict())
                continue
            if row['ask'] < row['bid']:
                self._reject(line, "crossed quote", raw.to_dict())
                continue

            self.records.append(QuoteRecord(
                symbol=raw['symbol'].strip(),
                quote_date=dates.loc[index, 'quote_date'].date(),
                expiry_date=dates.loc[index, 'expiry_date'].date(),
                strike=float(row['strike']),
                kind=KIND_ALIASES[raw['type'].strip().lower()],
                bid=float(row['bid']),
                ask=float(row['ask']),
                volume=int(row['volume']),
                open_interest=int(row['open_interest']),
            ))

        logger.info(f"Parsed {len(self.records)} quotes, rejected {len(self.rejections)} rows")
        return self.records, self.rejections

    @staticmethod
    def _malformed_reason(raw: pd.Series, row: pd.Series, dates: pd.Series) -> Optional[str]:
        if not raw['symbol'].strip():
            return "malformed: empty symbol"
        if raw['type'].strip().lower() not in KIND_ALIASES:
            return f"malformed: unknown type {raw['type']!r}"
        for name in ('quote_date', 'expiry_date'):
            if pd.isna(dates[name]):
                return f"malformed: bad {name} {raw[name]!r}"
        for name in ('strike', 'bid', 'ask', 'volume', 'open_interest'):
            value = row[name]
            if pd.isna(value) or not math.isfinite(value):
                return f"malformed: bad {name} {raw[name]!r}"
        if row['strike'] <= 0:
            return "malformed: non-positive strike"
        if row['bid'] < 0 or row['ask'] < 0:
            return "malformed: negative price"
        if row['volume'] < 0 or row['open_interest'] < 0:
            return "malformed: negative count"
        if row['volume'] != int(row['volume']) or row['open_interest'] != int(row['open_interest']):
            return "malformed: fractional count"
        if dates['expiry_date'] <= dates['quote_date']:
            return "malformed: expiry not after quote date"
        return None


def parse_chain_csv(source: Union[str, TextIO]) -> Tuple[List[QuoteRecord], List[Rejection]]:
    """
    解析期权链CSV文件（工具函数）

    Args:
        source: 文件路径或文本流

    Returns:
        (记录列表, 拒绝记录列表)
    """
    return ChainParser().parse(source)


def filter_records(records: Iterable[QuoteRecord], symbol: Optional[str] = None,
                   quote_date: Optional[date] = None) -> List[QuoteRecord]:
    """按标的和报价日筛选"""
    return [r for r in records
            if (symbol is None or r.symbol == symbol) and (quote_date is None or r.quote_date == quote_date)]


def group_chains(records: Iterable[QuoteRecord],
                 holidays: Optional[Sequence[date]] = None) -> List[Chain]:
    """
    按 (标的, 报价日, 到期日, 类型) 分组并按行权价排序

    同一行权价的重复报价只保留成交量较大的一条（相同则保留先出现的）。

    Args:
        records: 报价记录
        holidays: 可选的节假日列表

    Returns:
        List[Chain]: 期权链列表
    """
    groups: Dict[Tuple, Dict[float, QuoteRecord]] = {}
    for record in records:
        key = (record.symbol, record.quote_date, record.expiry_date, record.kind)
        by_strike = groups.setdefault(key, {})
        current = by_strike.get(record.strike)
        if current is None or record.volume > current.volume:
            by_strike[record.strike] = record

    chains = []
    for key in sorted(groups, key=lambda k: (k[0], k[1], k[2], k[3].value)):
        symbol, quote_date, expiry_date, kind = key
        try:
            days = trading_days_between(quote_date, expiry_date, holidays)
        except DomainError as e:
            logger.warning(f"Skipping chain {symbol} {expiry_date} {kind.value}: {e}")
            continue
        quotes = tuple(sorted(groups[key].values(), key=lambda q: q.strike))
        chains.append(Chain(symbol, quote_date, expiry_date, days, kind, quotes))
    return chains


def records_frame(records: Iterable[QuoteRecord]) -> pd.DataFrame:
    """记录转换为与输入CSV列顺序一致的 DataFrame"""
    rows = [{
        'symbol': r.symbol,
        'quote_date': r.quote_date.isoformat(),
        'expiry_date': r.expiry_date.isoformat(),
        'strike': r.strike,
        'type': r.kind.value,
        'bid': r.bid,
        'ask': r.ask,
        'volume': r.volume,
        'open_interest': r.open_interest,
    } for r in records]
    return pd.DataFrame(rows, columns=list(REQUIRED_COLUMNS))


def serialize_chain_csv(records: Iterable[QuoteRecord], path_or_buf: Union[str, TextIO, None] = None):
    """写出与输入格式相同的CSV；path_or_buf 为 None 时返回字符串"""
    return records_frame(records).to_csv(path_or_buf, index=False)


def chains_to_json(chains: Iterable[Chain]) -> str:
    """期权链打包为 JSON（供命令行使用）"""
    bundle = [{
        'symbol': c.symbol,
        'quote_date': c.quote_date.isoformat(),
        'expiry_date': c.expiry_date.isoformat(),
        'days_to_maturity': c.days_to_maturity,
        'kind': c.kind.value,
        'quotes': [{'strike': q.strike, 'bid': q.bid, 'ask': q.ask, 'mid': q.mid,
                    'volume': q.volume, 'open_interest': q.open_interest} for q in c.quotes],
    } for c in chains]
    return json.dumps(bundle, indent=2, ensure_ascii=False)
