"""
行情数据解析测试
"""

import io
import json
import os
from datetime import date

import numpy as np
import pytest

from market_data import (ChainParser, MissingColumnError, QuoteRecord, chains_to_json, filter_records,
                         group_chains, parse_chain_csv, serialize_chain_csv, trading_days_between)
from pricing_core import OptionKind
from returns_model import DomainError

HEADER = "symbol,quote_date,expiry_date,strike,type,bid,ask,volume,open_interest\n"

NYSE_2018_HOLIDAYS = [date(2018, 1, 1), date(2018, 1, 15), date(2018, 2, 19), date(2018, 3, 30),
                      date(2018, 5, 28), date(2018, 7, 4), date(2018, 9, 3), date(2018, 11, 22),
                      date(2018, 12, 25)]


@pytest.fixture
def sample(fixtures_dir):
    return parse_chain_csv(os.path.join(fixtures_dir, 'chain_sample.csv'))


class TestParser:
    """CSV解析与行过滤"""

    def test_counts(self, sample):
        records, rejections = sample
        assert len(records) == 7
        assert len(rejections) == 3

    def test_rejection_reasons(self, sample):
        _, rejections = sample
        by_line = {r.line: r.reason for r in rejections}
        assert by_line[6] == "zero bid"
        assert by_line[7] == "crossed quote"
        assert by_line[8].startswith("malformed")
        assert rejections[2].raw['strike'] == 'abc'

    def test_mid_price(self, sample):
        records, _ = sample
        quote = next(r for r in records if r.strike == 180)
        assert quote.mid == pytest.approx(1.05)
        assert quote.kind is OptionKind.CALL
        assert quote.quote_date == date(2018, 2, 28)

    def test_missing_column(self, fixtures_dir):
        with pytest.raises(MissingColumnError) as info:
            parse_chain_csv(os.path.join(fixtures_dir, 'missing_column.csv'))
        assert 'type' in str(info.value)

    def test_all_zero_bids(self, fixtures_dir):
        records, rejections = parse_chain_csv(os.path.join(fixtures_dir, 'zero_bid_chain.csv'))
        assert records == []
        assert [r.reason for r in rejections] == ["zero bid"] * 3

    def test_parser_resets_between_runs(self, fixtures_dir):
        parser = ChainParser()
        parser.parse(os.path.join(fixtures_dir, 'chain_sample.csv'))
        records, rejections = parser.parse(os.path.join(fixtures_dir, 'zero_bid_chain.csv'))
        assert records == [] and len(rejections) == 3

    @pytest.mark.parametrize("row,reason", [
        ("SYN,2018-02-28,2018-03-14,1.0,straddle,0.1,0.2,1,1", "malformed: unknown type"),
        ("SYN,2018/02/28,2018-03-14,1.0,call,0.1,0.2,1,1", "malformed: bad quote_date"),
        ("SYN,2018-03-14,2018-02-28,1.0,call,0.1,0.2,1,1", "malformed: expiry not after quote date"),
        ("SYN,2018-02-28,2018-03-14,-1.0,call,0.1,0.2,1,1", "malformed: non-positive strike"),
        ("SYN,2018-02-28,2018-03-14,1.0,call,0.1,0.2,1.5,1", "malformed: fractional count"),
        (",2018-02-28,2018-03-14,1.0,call,0.1,0.2,1,1", "malformed: empty symbol"),
    ])
    def test_malformed_rows(self, row, reason):
        records, rejections = parse_chain_csv(io.StringIO(HEADER + row + "\n"))
        assert records == []
        assert rejections[0].reason.startswith(reason)
        assert rejections[0].line == 2

    def test_short_type_aliases(self):
        text = HEADER + "SYN,2018-02-28,2018-03-14,1.0,C,0.1,0.2,1,1\nSYN,2018-02-28,2018-03-14,1.0,p,0.1,0.2,1,1\n"
        records, _ = parse_chain_csv(io.StringIO(text))
        assert [r.kind for r in records] == [OptionKind.CALL, OptionKind.PUT]

    def test_record_validation(self):
        with pytest.raises(DomainError):
            QuoteRecord('SYN', date(2018, 2, 28), date(2018, 3, 14), 1.0, OptionKind.CALL, 0.0, 0.1)
        with pytest.raises(DomainError):
            QuoteRecord('SYN', date(2018, 2, 28), date(2018, 3, 14), 1.0, OptionKind.CALL, 0.2, 0.1)


class TestTradingDays:
    """交易日计数"""

    def test_weekdays_in_2018(self):
        assert trading_days_between(date(2018, 1, 1), date(2019, 1, 1)) == 261

    def test_exchange_calendar_2018(self):
        assert trading_days_between(date(2018, 1, 1), date(2019, 1, 1), NYSE_2018_HOLIDAYS) == 252

    def test_short_span(self):
        assert trading_days_between(date(2018, 2, 28), date(2018, 3, 2)) == 2

    def test_expiry_must_follow_quote(self):
        with pytest.raises(DomainError):
            trading_days_between(date(2018, 3, 2), date(2018, 3, 2))

    def test_weekend_only_span(self):
        with pytest.raises(DomainError):
            trading_days_between(date(2018, 3, 3), date(2018, 3, 5))


class TestGrouping:
    """分组与序列化"""

    def test_chain_keys(self, sample):
        chains = group_chains(sample[0])
        keys = [(c.symbol, c.expiry_date, c.kind) for c in chains]
        assert keys == [
            ('AAPL', date(2018, 3, 2), OptionKind.CALL),
            ('AAPL', date(2018, 3, 2), OptionKind.PUT),
            ('AAPL', date(2018, 3, 16), OptionKind.CALL),
            ('MSFT', date(2018, 3, 2), OptionKind.CALL),
        ]
        assert [c.days_to_maturity for c in chains] == [2, 2, 12, 2]

    def test_duplicate_strike_keeps_higher_volume(self, sample):
        chain = group_chains(sample[0])[0]
        assert chain.strikes == [170.0, 175.0, 180.0]
        assert chain.quotes[1].volume == 300
        assert chain.mids[1] == pytest.approx(3.975)

    def test_filter(self, sample):
        records = sample[0]
        assert len(filter_records(records, symbol='MSFT')) == 1
        assert len(filter_records(records, quote_date=date(2018, 2, 28))) == 7
        assert filter_records(records, symbol='IBM') == []

    def test_csv_round_trip(self, sample):
        records = sample[0]
        text = serialize_chain_csv(records)
        again, rejections = parse_chain_csv(io.StringIO(text))
        assert rejections == []
        assert again == records

    def test_json_bundle(self, sample):
        bundle = json.loads(chains_to_json(group_chains(sample[0])))
        assert len(bundle) == 4
        assert bundle[0]['kind'] == 'call'
        assert bundle[0]['quotes'][2]['mid'] == pytest.approx(1.05)

    def test_random_rows_are_accounted_for(self):
        rng = np.random.default_rng(42)
        lines = []
        for i in range(300):
            bid = float(rng.choice([0.0, 0.05, 0.1, 0.3]))
            ask = float(rng.choice([0.02, 0.08, 0.2, 0.4]))
            strike = float(rng.choice([0.9, 0.95, 1.0, 1.05, 1.1]))
            kind = str(rng.choice(['call', 'put']))
            expiry = str(rng.choice(['2018-03-14', '2018-03-28']))
            lines.append(f"SYN,2018-02-28,{expiry},{strike},{kind},{bid},{ask},{i},{i}")
        records, rejections = parse_chain_csv(io.StringIO(HEADER + "\n".join(lines) + "\n"))

        assert len(records) + len(rejections) == 300
        assert all(r.bid > 0 and r.ask >= r.bid for r in records)
        for chain in group_chains(records):
            assert np.all(np.diff(chain.strikes) > 0)
            assert chain.days_to_maturity in (10, 20)
