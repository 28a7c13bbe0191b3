#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
FlowE 主入口
"""

import sys
import os
import argparse
import logging

# 添加项目根目录到Python路径
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from flowe.core.errors import FlowEError, ConfigError
from flowe.cli.config import load_config
from flowe.cli.commands import (
    cmd_gen_data, cmd_train, cmd_readout, cmd_check, cmd_flo, cmd_sweep,
    apply_ablation, ABLATIONS, SWEEP_VARIANTS, CheckFailed
)


EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2
EXIT_CHECK = 3


def parse_arguments(argv=None):
    """
    解析命令行参数，未识别的 --section.key=value 作为配置覆盖

    Returns:
        tuple: (参数, 覆盖列表)
    """
    common = argparse.ArgumentParser(add_help=False, allow_abbrev=False)
    common.add_argument('--config', type=str, help='JSON配置文件路径')
    common.add_argument('--out-dir', type=str, help='输出目录')
    common.add_argument('--seed', type=int, help='全局随机种子')
    common.add_argument('--debug', action='store_true', help='启用调试日志')

    parser = argparse.ArgumentParser(description='FlowE 光流等变自监督表征学习', allow_abbrev=False)
    commands = parser.add_subparsers(dest='command', required=True)

    commands.add_parser('gen-data', parents=[common], help='生成合成视频数据集')

    train = commands.add_parser('train', parents=[common], help='训练编码器')
    train.add_argument('--resume', action='store_true', help='从最新检查点继续')
    train.add_argument('--ablation', choices=sorted(ABLATIONS), default='full', help='消融变体')
    train.add_argument('--steps', type=int, help='训练步数')

    readout = commands.add_parser('readout', parents=[common], help='冻结编码器上的线性读出')
    readout.add_argument('--encoder', type=str, help='编码器检查点路径，或 random')

    commands.add_parser('check', parents=[common], help='梯度与变形代数自检')

    flo = commands.add_parser('flo', parents=[common], help='.flo 文件工具')
    flo.add_argument('action', choices=['inspect', 'diff'])
    flo.add_argument('paths', nargs='+')

    sweep = commands.add_parser('sweep', parents=[common], help='消融扫描')
    sweep.add_argument('--variants', nargs='+', choices=sorted(ABLATIONS), default=list(SWEEP_VARIANTS))
    sweep.add_argument('--seeds', nargs='+', type=int, default=[0, 1, 2])

    args, unknown = parser.parse_known_args(argv)
    overrides = []
    for text in unknown:
        if not text.startswith('--') or '=' not in text:
            parser.error(f"unrecognized argument '{text}'")
        overrides.append(text)
    return args, overrides


def build_config(args, overrides):
    """默认值 ← 配置文件 ← 命令行选项 ← 点路径覆盖"""
    options = []
    if args.out_dir:
        options.append(f"out_dir={args.out_dir}")
    if args.seed is not None:
        options.append(f"seed={args.seed}")
    if getattr(args, 'steps', None) is not None:
        options.append(f"trainer.total_steps={args.steps}")
    if getattr(args, 'encoder', None):
        options.append(f"readout.encoder_checkpoint={args.encoder}")
    config = load_config(args.config, options + overrides)
    if getattr(args, 'ablation', 'full') != 'full':
        config = apply_ablation(config, args.ablation).resolved()
    return config


def run(args, overrides):
    """执行子命令"""
    if args.command == 'flo':
        cmd_flo(args.action, args.paths)
        return EXIT_OK
    if args.command == 'check':
        cmd_check(args.seed or 0, args.out_dir, args.debug)
        return EXIT_OK

    config = build_config(args, overrides)
    if args.command == 'gen-data':
        cmd_gen_data(config, args.debug)
    elif args.command == 'train':
        cmd_train(config, args.resume, args.debug)
    elif args.command == 'readout':
        cmd_readout(config, args.debug)
    elif args.command == 'sweep':
        cmd_sweep(config, args.variants, args.seeds, args.debug)
    return EXIT_OK


def main(argv=None):
    """主函数"""
    args, overrides = parse_arguments(argv)
    logger = logging.getLogger('FlowE')
    try:
        return run(args, overrides)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckFailed as e:
        print(str(e), file=sys.stderr)
        return EXIT_CHECK
    except (FlowEError, OSError) as e:
        logger.error(f"{args.command} failed: {e}", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
