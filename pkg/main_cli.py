#!/usr/bin/env python3
"""
HTO (Heavy-Tailed Options) - 命令行主程序

这个模块是引擎的入口点，提供四个子命令：
price（单个合约定价）、plateau（截断平台扫描）、calibrate（按期权链校准 γ）、validate（无套利与蒙特卡洛对照）。

退出码：0 成功，2 周期无法定价，3 无可用数据，64 参数错误。
"""

import argparse
import io
import json
import math
import os
import sys
from datetime import date
from typing import Any, Dict, List, Optional, Sequence

from rich.console import Console
from rich.table import Table

# 必须在第一次导入 numpy 之前限制 BLAS 内部线程
os.environ.setdefault('OMP_NUM_THREADS', '1')
os.environ.setdefault('MKL_NUM_THREADS', '1')

# 添加当前目录到Python路径
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from calibration import (EmptyObjectiveError, ModelSettings, evaluate_panel, fit_bsm_sigma,
                         fit_gamma, select_nearest_expiry)
from config_manager import ConfigManager, setup_logger
from manifest_manager import ManifestManager
from market_data import MissingColumnError, filter_records, group_chains, parse_chain_csv
from no_arbitrage import mgf_residual
from oracle import mc_price, ordering_error_budget
from pricing_core import (ContractError, OptionContract, OptionKind, PricingConfig,
                          parity_residual, parse_drift, price_call, price_contract)
from returns_model import DomainError, ReturnModel
from spectral_engine import DensityCache, EngineSettings, HorizonUnavailableError, build_density
from truncation_analysis import INCLINATION_NOTE, log_spaced_grid, plateau_inclination, plateau_scan, scan_to_csv

logger = setup_logger('HTO.MainCLI', 'cli_log.log')

EXIT_OK = 0
EXIT_HORIZON_UNAVAILABLE = 2
EXIT_NO_DATA = 3
EXIT_USAGE = 64


class UsageError(Exception):
    """命令行参数错误"""
    pass


class CliArgumentParser(argparse.ArgumentParser):
    """参数错误时抛出 UsageError，而不是直接以状态 2 退出"""

    def error(self, message: str):
        raise UsageError(message)


def fmt(value: Optional[float]) -> str:
    """六位有效数字"""
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "--"
    return f"{value:.6g}"


def parse_int_list(text: str) -> List[int]:
    values = [int(part) for part in text.split(',') if part.strip()]
    if not values:
        raise UsageError("empty horizon list")
    if any(v < 1 for v in values):
        raise UsageError(f"horizons must be positive: {text!r}")
    return values


class HTOCommandLine:
    """命令行应用类 - 负责协调各个计算模块并输出结果"""

    def __init__(self, settings: Dict[str, Any]):
        """
        初始化命令行应用

        Args:
            settings (Dict[str, Any]): 由 ConfigManager 加载的默认参数
        """
        self.settings = settings
        self.console = Console(width=160, highlight=False)
        self.err_console = Console(stderr=True, width=160, highlight=False)
        self.cache = DensityCache()

    def _engine(self, samples: int, edge_threshold: Optional[float] = None) -> EngineSettings:
        engine = EngineSettings.from_settings(self.settings).with_samples(samples)
        if edge_threshold is not None:
            engine = EngineSettings(samples, engine.oversampling, edge_threshold, engine.negative_tolerance)
        return engine

    def _pricing(self, args, spot: float) -> PricingConfig:
        mode, mu = parse_drift(args.drift)
        return PricingConfig(spot=spot, annual_rate=args.rate,
                             trading_days_per_year=int(self.settings.get('trading_days_per_year', 252)),
                             drift_mode=mode, explicit_mu=mu)

    def _snapshot(self, args, **extra) -> Dict[str, Any]:
        snapshot = {
            'm_mult': getattr(args, 'm_mult', None),
            'n_samples': args.samples,
            'annual_rate': args.rate,
            'drift_mode': args.drift,
            'trading_days_per_year': int(self.settings.get('trading_days_per_year', 252)),
            'oversampling': int(self.settings.get('oversampling', 4)),
            'edge_threshold': args.edge_threshold if args.edge_threshold is not None
            else float(self.settings.get('edge_threshold', 1e-3)),
            'calendar': 'weekdays',
        }
        snapshot.update(extra)
        return snapshot

    def _write_manifest(self, command: str, snapshot: Dict[str, Any], outputs: Sequence[str],
                        inputs: Sequence[str] = ()) -> None:
        outputs = [p for p in outputs if p]
        if not outputs:
            return
        manager = ManifestManager(os.path.dirname(os.path.abspath(outputs[0])))
        manifest = manager.create(command, snapshot, inputs)
        for path in outputs:
            manager.record_output(manifest, path)
        manager.write(manifest)

    def cmd_price(self, args) -> int:
        """单个合约定价"""
        model = (ReturnModel.from_width(args.gamma, args.xmax) if args.xmax
                 else ReturnModel.from_multiple(args.gamma, args.m_mult))
        engine = self._engine(args.samples, args.edge_threshold)
        config = self._pricing(args, args.spot)
        kind = OptionKind(args.kind)
        contract = OptionContract(args.strike, args.days, kind)

        grid = build_density(model, args.days, args.samples, engine, self.cache)
        result = price_contract(grid, contract, config)
        other_kind = OptionKind.PUT if kind is OptionKind.CALL else OptionKind.CALL
        counterpart = price_contract(grid, contract.as_kind(other_kind), config)
        residual = parity_residual(grid, args.strike, config)
        report = mgf_residual(model, args.days, args.samples, engine, self.cache)

        table = Table(title=f"{kind.value} K={fmt(args.strike)} N={args.days} γ={fmt(args.gamma)} "
                            f"x_max={fmt(model.x_max)} drift={config.describe_drift()}")
        table.add_column("quantity")
        table.add_column("value", justify="right")
        table.add_row("price", fmt(result.price))
        table.add_row("intrinsic", fmt(result.intrinsic))
        table.add_row(f"parity counterpart ({other_kind.value})", fmt(counterpart.price))
        table.add_row("parity residual", fmt(residual))
        table.add_row("MGF defect", fmt(report.relative_defect))
        self.console.print(table)

        if args.out:
            payload = {
                'kind': kind.value, 'strike': args.strike, 'days': args.days, 'spot': args.spot,
                'gamma': args.gamma, 'x_max': model.x_max, 'price': result.price,
                'intrinsic': result.intrinsic, 'counterpart': counterpart.price,
                'parity_residual': residual, 'mgf_defect': report.relative_defect,
                'quadrature_nodes': result.quadrature_nodes,
            }
            with open(args.out, 'w', encoding='utf-8') as f:
                json.dump(payload, f, indent=2, sort_keys=True)
            self._write_manifest('price', self._snapshot(args, gamma=args.gamma, x_max=model.x_max), [args.out])
        return EXIT_OK

    def cmd_plateau(self, args) -> int:
        """截断平台扫描"""
        horizons = parse_int_list(args.horizons)
        grid_values = log_spaced_grid(args.xmax_grid)
        summary = [float(v) for v in args.summary.split(',') if v.strip()]
        if grid_values.size < 3:
            left, mid, right = grid_values[0], grid_values[grid_values.size // 2], grid_values[-1]
        else:
            if len(summary) != 3:
                raise UsageError("--summary needs three x_max values")
            grid_values = sorted(set(grid_values.tolist()) | set(summary))
            left, mid, right = summary

        config = self._pricing(args, 1.0)
        engine = self._engine(args.samples, args.edge_threshold)
        scan = plateau_scan(args.gamma, args.strike_ratio, horizons, grid_values, config,
                            n_samples=args.samples, settings=engine)

        buffer = io.StringIO()
        scan_to_csv(scan, buffer)
        if args.out:
            with open(args.out, 'w', encoding='utf-8', newline='') as f:
                f.write(buffer.getvalue())
            self._write_manifest('plateau', self._snapshot(args, gamma=args.gamma,
                                                           strike_ratio=args.strike_ratio,
                                                           horizons=horizons,
                                                           xmax_grid=args.xmax_grid,
                                                           inclination=INCLINATION_NOTE), [args.out])
            summary_console = self.console
        else:
            sys.stdout.write(buffer.getvalue())
            summary_console = self.err_console

        table = Table(title=f"plateau inclination K/S={fmt(args.strike_ratio)} (relative Δ)", caption=INCLINATION_NOTE)
        for name in ("horizon", f"C({fmt(left)})", f"C({fmt(mid)})", f"C({fmt(right)})", "ΔC left", "ΔC right"):
            table.add_column(name, justify="right")
        for row in plateau_inclination(scan, left, mid, right):
            table.add_row(str(row.horizon_days), fmt(row.c_left), fmt(row.c_mid), fmt(row.c_right),
                          fmt(row.delta_left), fmt(row.delta_right))
        summary_console.print(table)
        for (h, w), reason in sorted(scan.failures.items()):
            summary_console.print(f"missing cell horizon={h} x_max={fmt(w)}: {reason}")
        return EXIT_OK

    def cmd_calibrate(self, args) -> int:
        """按最近到期日校准 γ，并在其余到期日上评估误差"""
        try:
            records, rejections = parse_chain_csv(args.chains)
        except MissingColumnError as e:
            self.err_console.print(f"no usable chain: {e}")
            return EXIT_NO_DATA

        quote_date = date.fromisoformat(args.quote_date) if args.quote_date else None
        records = filter_records(records, args.symbol, quote_date)
        chains = group_chains(records)
        nearest = select_nearest_expiry(chains, args.symbol, quote_date)
        if nearest is None:
            self.err_console.print(f"no usable chain ({len(rejections)} rows rejected)")
            return EXIT_NO_DATA

        config = self._pricing(args, args.spot)
        model_settings = ModelSettings(m_mult=args.m_mult, n_samples=args.samples,
                                       engine=self._engine(args.samples, args.edge_threshold), cache=self.cache)
        bracket = tuple(self.settings.get('calibration_bracket', [0.001, 0.1]))
        try:
            result = fit_gamma(list(nearest.quotes), config, bracket, model_settings)
        except EmptyObjectiveError as e:
            self.err_console.print(f"no usable chain: {e}")
            return EXIT_NO_DATA

        try:
            sigma, _ = fit_bsm_sigma(list(nearest.quotes), config)
        except EmptyObjectiveError:
            sigma = None

        later = [c for c in chains
                 if c.symbol == nearest.symbol and c.quote_date == nearest.quote_date
                 and c.kind is OptionKind.CALL and c.expiry_date > nearest.expiry_date]
        panel = evaluate_panel(result.gamma_hat, later, config, model_settings, sigma)

        payload = result.to_dict()
        payload['sigma_bsm'] = sigma
        payload['rejected_rows'] = len(rejections)
        text = json.dumps(payload, indent=2, ensure_ascii=False, sort_keys=True)

        outputs = []
        if args.out:
            with open(args.out, 'w', encoding='utf-8') as f:
                f.write(text + "\n")
            outputs.append(args.out)
        else:
            sys.stdout.write(text + "\n")
        if args.panel:
            panel.to_csv(args.panel)
            outputs.append(args.panel)
        else:
            table = Table(title=f"{nearest.symbol} log-price MSE, γ̂={fmt(result.gamma_hat)}")
            for name in ("days", "expiry", "model MSE", "BSM MSE", "strikes"):
                table.add_column(name, justify="right")
            for row in panel.rows:
                table.add_row(str(row.days_to_maturity), row.expiry_date.isoformat(),
                              fmt(row.model_mse), fmt(row.reference_mse), str(row.n_strikes))
            self.err_console.print(table)

        self._write_manifest('calibrate', self._snapshot(args, symbol=nearest.symbol,
                                                         quote_date=nearest.quote_date.isoformat()),
                             outputs, [args.chains])
        return EXIT_OK

    def cmd_validate(self, args) -> int:
        """MGF 偏差、平价残差与蒙特卡洛对照"""
        horizons = parse_int_list(args.horizons)
        if args.paths and args.paths < 10_000:
            raise UsageError("--paths must be 0 or at least 10000")

        model = ReturnModel.from_multiple(args.gamma, args.m_mult)
        engine = self._engine(args.samples, args.edge_threshold)
        config = self._pricing(args, 1.0)

        table = Table(title=f"validation γ={fmt(args.gamma)} M={fmt(args.m_mult)} drift={config.describe_drift()}")
        for name in ("horizon", "MGF defect", "parity residual", "quadrature", "Monte Carlo",
                     "|Δ|", "allowance", "status"):
            table.add_column(name, justify="right")

        failures = []
        for h in horizons:
            try:
                grid = build_density(model, h, args.samples, engine, self.cache)
            except HorizonUnavailableError as e:
                failures.append(f"horizon {h}: {e}")
                table.add_row(str(h), "--", "--", "--", "--", "--", "--", "unavailable")
                continue

            report = mgf_residual(model, h, args.samples, engine, self.cache)
            residual = parity_residual(grid, config.spot, config)
            contract = OptionContract(config.spot, h, OptionKind.CALL)
            quad = price_call(grid, contract, config).price

            if args.paths:
                estimate = mc_price(model, contract, config, args.paths, args.seed)
                budget = ordering_error_budget(model, contract, config, settings=engine)
                delta = abs(estimate.price - quad)
                allowance = 3.0 * estimate.std_error + budget
                status = "ok" if delta <= allowance else "FAIL"
                if status != "ok":
                    failures.append(f"horizon {h}: |Δ|={fmt(delta)} exceeds allowance {fmt(allowance)} "
                                    f"by {fmt(delta - allowance)}")
                table.add_row(str(h), fmt(report.relative_defect), fmt(residual), fmt(quad),
                              fmt(estimate.price), fmt(delta), fmt(allowance), status)
            else:
                table.add_row(str(h), fmt(report.relative_defect), fmt(residual), fmt(quad),
                              "--", "--", "--", "ok")

        self.console.print(table)
        for line in failures:
            self.console.print(line)
        return EXIT_OK


def _add_model_flags(parser: argparse.ArgumentParser, settings: Dict[str, Any]) -> None:
    parser.add_argument('--gamma', type=float, default=float(settings['gamma']), help='单位周期宽度 γ')
    parser.add_argument('--m-mult', dest='m_mult', type=float, default=float(settings['m_mult']),
                        help='截断倍数 M（x_max = M·γ）')
    parser.add_argument('--rate', type=float, default=float(settings['annual_rate']), help='年化无风险利率')
    parser.add_argument('--samples', type=int, default=int(settings['n_samples']), help='采样点数 N_s')
    parser.add_argument('--drift', type=str, default=str(settings['drift_mode']),
                        help="漂移约定：rn 或 explicit:<μ>")
    parser.add_argument('--edge-threshold', dest='edge_threshold', type=float, default=None,
                        help='混叠检查的边缘/峰值比阈值')


def build_parser(settings: Dict[str, Any]) -> CliArgumentParser:
    """
    创建参数解析器

    Args:
        settings (Dict[str, Any]): 默认参数

    Returns:
        CliArgumentParser: 解析器
    """
    parser = CliArgumentParser(prog='main_cli.py', description='HTO (Heavy-Tailed Options)')
    parser.add_argument('--config', type=str, default=None, help='配置文件路径')
    parser.add_argument('--threads', type=int, default=None, help='工作线程数（0 为自动），默认取环境变量或配置文件')
    sub = parser.add_subparsers(dest='command', parser_class=CliArgumentParser)
    sub.required = True

    price = sub.add_parser('price', help='欧式期权定价')
    _add_model_flags(price, settings)
    price.add_argument('--spot', type=float, default=1.0)
    price.add_argument('--strike', type=float, required=True)
    price.add_argument('--days', type=int, required=True)
    price.add_argument('--kind', choices=[k.value for k in OptionKind], default='call')
    price.add_argument('--xmax', type=float, default=None, help='截断半宽，默认 M·γ')
    price.add_argument('--out', type=str, default=None, help='JSON 输出文件')

    plateau = sub.add_parser('plateau', help='截断平台扫描')
    _add_model_flags(plateau, settings)
    plateau.set_defaults(samples=2 ** 16)
    plateau.add_argument('--strike-ratio', dest='strike_ratio', type=float, default=0.9)
    plateau.add_argument('--horizons', type=str, default='1,8,64')
    plateau.add_argument('--xmax-grid', dest='xmax_grid', type=str, default='log:0.3:20:40')
    plateau.add_argument('--summary', type=str, default='1,2,5', help='倾斜度表使用的三个 x_max')
    plateau.add_argument('--out', type=str, default=None, help='CSV 输出文件，默认标准输出')

    calibrate = sub.add_parser('calibrate', help='按期权链校准 γ')
    _add_model_flags(calibrate, settings)
    calibrate.set_defaults(samples=2 ** 16)
    calibrate.add_argument('--chains', type=str, required=True, help='期权链 CSV 文件')
    calibrate.add_argument('--spot', type=float, required=True, help='标的现价')
    calibrate.add_argument('--symbol', type=str, default=None)
    calibrate.add_argument('--quote-date', dest='quote_date', type=str, default=None)
    calibrate.add_argument('--out', type=str, default=None, help='校准结果 JSON 文件')
    calibrate.add_argument('--panel', type=str, default=None, help='误差表 CSV 文件')

    validate = sub.add_parser('validate', help='无套利与蒙特卡洛检验')
    _add_model_flags(validate, settings)
    validate.set_defaults(samples=2 ** 16)
    validate.add_argument('--horizons', type=str, default='1,8,32,64')
    validate.add_argument('--paths', type=int, default=int(settings['mc_paths']), help='路径数，0 表示跳过')
    validate.add_argument('--seed', type=int, default=int(settings['mc_seed']))
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """主函数"""
    argv = list(sys.argv[1:] if argv is None else argv)

    # 先取出 --config 以便用配置文件作为默认值
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument('--config', type=str, default=None)
    known, _ = pre.parse_known_args(argv)
    config_manager = ConfigManager(known.config) if known.config else ConfigManager()
    settings = config_manager.load_config()

    app = HTOCommandLine(settings)
    try:
        args = build_parser(settings).parse_args(argv)
        if args.threads is not None:
            os.environ['HT_OPTIONS_THREADS'] = str(args.threads)
        else:
            # 环境变量优先于配置文件
            os.environ.setdefault('HT_OPTIONS_THREADS', str(int(settings['threads'])))
        handler = {
            'price': app.cmd_price,
            'plateau': app.cmd_plateau,
            'calibrate': app.cmd_calibrate,
            'validate': app.cmd_validate,
        }[args.command]
        return handler(args)
    except UsageError as e:
        app.err_console.print(f"usage error: {e}")
        return EXIT_USAGE
    except HorizonUnavailableError as e:
        app.err_console.print(f"horizon unavailable: {e}")
        logger.warning(str(e))
        return EXIT_HORIZON_UNAVAILABLE
    except (DomainError, ContractError, ValueError) as e:
        app.err_console.print(f"usage error: {e}")
        return EXIT_USAGE
    except FileNotFoundError as e:
        app.err_console.print(f"usage error: {e}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
