"""
命令行入口: python -m src.main <command> [options]

退出码: 0 成功/通过，1 容差未通过，2 使用错误(参数、文件、配置、构建)。
"""

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from .config.settings import settings
from .cli import commands
from .models.quant_models import IntMathConfig, KernelConfig, RequantRounding
from .models.report_models import CommandName, InputSpec, RunConfig, InputDistribution
from .models.vit_models import CalibrationMethod, ModelConfig
from .services.kernel_sweep import KernelSweepFactory
from .services.report_writer import render_table
from .services.error_handler import (
    error_handler, UsageError, EXIT_OK, EXIT_TOLERANCE_FAILURE, EXIT_USAGE_ERROR,
)
from .utils.logger import logger, set_log_level

MODEL_FIELDS = ('image_size', 'patch_size', 'channels', 'd_model', 'heads', 'mlp_ratio',
                'depth', 'num_classes', 'softmax_bits', 'gelu_bits', 'score_bits')
SPEC_FIELDS = ('distribution', 'width', 'scales', 'low', 'high', 'std', 'k_out')


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='JSON 配置文件(键为选项名，命令行显式给出的选项优先)')
    common.add_argument('--seed', type=int, default=settings.default_seed)
    common.add_argument('--log-level', default=settings.log_level,
                        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])
    common.add_argument('--batch-workers', type=int, default=settings.batch_workers)
    return common


def _kernel_parser() -> argparse.ArgumentParser:
    knobs = argparse.ArgumentParser(add_help=False)
    knobs.add_argument('--requant-rounding', default=settings.requant_rounding,
                       choices=[mode.value for mode in RequantRounding])
    knobs.add_argument('-N', '--shift-exp-n', type=int, default=settings.shift_exp_n)
    knobs.add_argument('--int-div-m', type=int, default=settings.int_div_m)
    knobs.add_argument('--isqrt-iters', type=int, default=settings.isqrt_iters)
    knobs.add_argument('--layernorm-precision', type=int, default=settings.layernorm_precision)
    knobs.add_argument('--dyadic-shift', type=int, default=settings.dyadic_shift)
    return knobs


def _calibration_parser() -> argparse.ArgumentParser:
    calib = argparse.ArgumentParser(add_help=False)
    calib.add_argument('--num-inputs', type=int, default=64)
    calib.add_argument('--method', default=CalibrationMethod.MINMAX.value,
                       choices=[method.value for method in CalibrationMethod])
    calib.add_argument('--percentile', type=float, default=99.99)
    return calib


def build_parser(overrides: Optional[Dict[str, Dict[str, Any]]] = None) -> argparse.ArgumentParser:
    """
    构建命令行解析器

    Args:
        overrides: 按子命令名给出的默认值覆盖(来自 --config)
    """
    overrides = overrides or {}
    parser = argparse.ArgumentParser(prog="ivit", description="整数 ViT 推理引擎")
    subparsers = parser.add_subparsers(dest="command", required=True)
    common, knobs, calib = _common_parser(), _kernel_parser(), _calibration_parser()

    gen = subparsers.add_parser(CommandName.GEN_MODEL.value, parents=[common],
                                help='生成浮点模型权重')
    defaults = {**ModelConfig().model_dump(), 'softmax_bits': settings.softmax_out_bits,
                'gelu_bits': settings.gelu_out_bits, 'score_bits': settings.score_bits}
    for field in MODEL_FIELDS:
        gen.add_argument(f"--{field.replace('_', '-')}", type=int, default=defaults[field])
    gen.add_argument('--init-std', type=float, default=settings.init_std)
    gen.add_argument('--out-dir', required=True)

    calibrate = subparsers.add_parser(CommandName.CALIBRATE.value, parents=[common, calib],
                                      help='收集激活范围')
    calibrate.add_argument('--model-dir', required=True)
    calibrate.add_argument('--inputs', help='ITNS 校准输入(N, C, H, W)')
    calibrate.add_argument('--out', help='校准文件路径，默认 <model-dir>/calibration.json')

    quantize = subparsers.add_parser(CommandName.QUANTIZE.value, parents=[common, knobs, calib],
                                     help='构建量化模型')
    quantize.add_argument('--model-dir', required=True)
    quantize.add_argument('--calibration', help='校准文件；缺省时现场校准')

    infer = subparsers.add_parser(CommandName.INFER.value, parents=[common], help='整数推理')
    infer.add_argument('--model-dir', required=True)
    infer.add_argument('--input', required=True)
    infer.add_argument('--out', required=True)
    infer.add_argument('--no-audit', action='store_true', help='关闭整数审计')

    infer_fp = subparsers.add_parser(CommandName.INFER_FP.value, parents=[common], help='浮点参考推理')
    infer_fp.add_argument('--model-dir', required=True)
    infer_fp.add_argument('--input', required=True)
    infer_fp.add_argument('--out', required=True)

    compare = subparsers.add_parser(CommandName.COMPARE.value, parents=[common],
                                    help='整数与浮点 logits 比较')
    compare.add_argument('--model-dir', required=True)
    compare.add_argument('--inputs', help='ITNS 评估输入(N, C, H, W)；缺省时随机生成')
    compare.add_argument('--num-inputs', type=int, default=100)
    compare.add_argument('--report', required=True)
    compare.add_argument('--fallback-nonlinear', action='store_true',
                         help='追加非线性算子浮点回退的对照记录')

    kernel_test = subparsers.add_parser(CommandName.KERNEL_TEST.value, parents=[common, knobs],
                                        help='算子扫描验证')
    kernel_test.add_argument('--kernel', required=True)
    kernel_test.add_argument('--trials', type=int, default=10000)
    kernel_test.add_argument('--report')
    kernel_test.add_argument('--distribution', choices=[item.value for item in InputDistribution])
    kernel_test.add_argument('--width', type=int)
    kernel_test.add_argument('--scales', type=float, nargs='+')
    kernel_test.add_argument('--low', type=int)
    kernel_test.add_argument('--high', type=int)
    kernel_test.add_argument('--std', type=float)
    kernel_test.add_argument("--k-out", type=int)

    for name, values in overrides.items():
        subparsers.choices[name].set_defaults(**values)
    return parser


def _load_config_file(path: str) -> Dict[str, Any]:
    config_path = Path(path)
    if not config_path.exists():
        raise UsageError(f"配置文件不存在: {config_path}")
    try:
        with open(config_path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise UsageError(f"配置文件不是合法 JSON: {config_path}: {e}") from e
    if not isinstance(data, dict):
        raise UsageError(f"配置文件顶层必须是对象: {config_path}")
    return {key.replace('-', '_'): value for key, value in data.items()}


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    """
    解析命令行；--config 中的值作为子命令默认值，显式选项优先

    Raises:
        UsageError: 配置文件缺失、格式错误或含未知键
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.config:
        return args

    config = _load_config_file(args.config)
    unknown = sorted(key for key in config if not hasattr(args, key) or key in ('command', 'config'))
    if unknown:
        raise UsageError(f"配置文件含未知选项: {', '.join(unknown)}")
    return build_parser({args.command: config}).parse_args(argv)


def kernel_config_from(args: argparse.Namespace) -> KernelConfig:
    return KernelConfig(
        int_math=IntMathConfig(N=args.shift_exp_n, M=args.int_div_m, iters=args.isqrt_iters),
        requant_rounding=RequantRounding(args.requant_rounding),
        layernorm_precision=args.layernorm_precision,
        dyadic_shift=args.dyadic_shift,
    )


def input_spec_from(args: argparse.Namespace) -> Optional[InputSpec]:
    """kernel-test 的输入分布；未给出任何分布选项时使用算子的默认分布"""
    overrides = {field: getattr(args, field) for field in SPEC_FIELDS if getattr(args, field) is not None}
    if not overrides:
        return None
    handler = KernelSweepFactory.get_handler(args.kernel)
    return InputSpec.model_validate({**handler.default_spec().model_dump(), **overrides})


def run_config_from(args: argparse.Namespace) -> RunConfig:
    """把解析后的选项整理为嵌入报告的运行配置"""
    values: Dict[str, Any] = {'command': CommandName(args.command), 'seed': args.seed,
                              'batch_workers': args.batch_workers}
    paths = {key: str(getattr(args, key)) for key in
             ('model_dir', 'out_dir', 'input', 'inputs', 'out', 'report', 'calibration')
             if getattr(args, key, None)}
    values['paths'] = paths
    for key in ('requant_rounding', 'shift_exp_n', 'int_div_m', 'isqrt_iters',
                'layernorm_precision', 'dyadic_shift', 'num_inputs', 'trials'):
        if hasattr(args, key):
            values[key] = getattr(args, key)
    if hasattr(args, 'method'):
        values['calibration_method'] = args.method
    if args.command == CommandName.KERNEL_TEST.value:
        values['kernel'] = KernelSweepFactory.get_handler(args.kernel).kernel
        values['input_spec'] = input_spec_from(args)
    if args.command == CommandName.COMPARE.value:
        values['fallback_nonlinear'] = args.fallback_nonlinear
    return RunConfig(**values)


def dispatch(args: argparse.Namespace) -> int:
    """执行子命令并返回退出码"""
    command = CommandName(args.command)
    if command == CommandName.GEN_MODEL:
        config = ModelConfig(**{field: getattr(args, field) for field in MODEL_FIELDS})
        commands.cmd_gen_model(config, args.seed, args.out_dir, args.init_std)
        return EXIT_OK

    if command == CommandName.CALIBRATE:
        commands.cmd_calibrate(args.model_dir, args.seed, args.num_inputs, args.inputs,
                               CalibrationMethod(args.method), args.percentile, args.out)
        return EXIT_OK

    if command == CommandName.QUANTIZE:
        commands.cmd_quantize(args.model_dir, kernel_config_from(args), args.seed,
                              args.calibration, args.num_inputs,
                              CalibrationMethod(args.method), args.percentile)
        return EXIT_OK

    if command == CommandName.INFER:
        commands.cmd_infer(args.model_dir, args.input, args.out, audit=not args.no_audit,
                           workers=args.batch_workers)
        return EXIT_OK

    if command == CommandName.INFER_FP:
        commands.cmd_infer_fp(args.model_dir, args.input, args.out)
        return EXIT_OK

    if command == CommandName.COMPARE:
        report = commands.cmd_compare(args.model_dir, args.report, args.seed, args.num_inputs,
                                      args.inputs, args.fallback_nonlinear,
                                      workers=args.batch_workers, run_config=run_config_from(args))
    else:
        run_config = run_config_from(args)
        report = commands.cmd_kernel_test(args.kernel, run_config.input_spec, args.trials, args.seed,
                                          kernel_config_from(args), args.report,
                                          run_config=run_config)
    print(render_table(report), end="")
    return EXIT_OK if report.passed else EXIT_TOLERANCE_FAILURE


def main(argv: Optional[List[str]] = None) -> int:
    """命令行主函数"""
    try:
        args = parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE_ERROR
    except Exception as e:
        return error_handler.handle_command_error("parse", e)

    set_log_level(args.log_level)
    logger.info(f"执行命令: {args.command} (seed={args.seed})")
    try:
        return dispatch(args)
    except Exception as e:
        return error_handler.handle_command_error(args.command, e)
    finally:
        error_handler.log_error_summary()


if __name__ == "__main__":
    sys.exit(main())
