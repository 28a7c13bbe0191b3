"""
命令实现：生成数据、训练、读出评估、自检、.flo 工具与消融扫描
"""

import os
import json
import dataclasses

import numpy as np

from flowe.core.config import apply_overrides
from flowe.core.errors import ConfigError, DataSourceError
from flowe.core.logging_setup import get_logger, configure_logging
from flowe.geometry.flo_io import flo_read_file
from flowe.geometry.flow import flow_stats, flow_endpoint_error
from flowe.synthvid.dataset_manager import (
    gen_dataset, DatasetManager, MANIFEST_NAME, split_episode_ids
)
from flowe.trainer.data_sources import open_source
from flowe.trainer.train_system import train_loop
from flowe.readout.config import RANDOM_ENCODER
from flowe.readout.evaluation import run_readout
from flowe.cli.config import save_config
from flowe.cli.check_suite import run_check_suite


logger = get_logger('cli')

DATASET_DIR = "dataset"
SWEEP_NAME = "sweep.json"
CHECK_NAME = "check.json"

# 消融名称 → 配置覆盖
ABLATIONS = {
    "full": (),
    "no_affine": ("trainer.ablation.use_affine=false",),
    "no_flow": ("trainer.ablation.use_flow=false",),
    "pooled": ("trainer.ablation.pixel_based=false",),
    "same_frame": ("trainer.ablation.same_frame=true",),
    "noisy_flow": ("synthvid.noise_sigma_flow=1.0",),
}
SWEEP_VARIANTS = ("full", "no_affine", "no_flow", "pooled", "same_frame", "noisy_flow")


class CheckFailed(Exception):
    """自检未通过"""

    def __init__(self, report):
        names = ", ".join(result.name for result in report.failures)
        super().__init__(f"check suite failed: {names}")
        self.report = report


def apply_ablation(config, name):
    """
    把消融名称映射为配置覆盖

    Args:
        config (RunConfig): 运行配置
        name (str): 消融名称

    Returns:
        RunConfig: 新配置
    """
    if name not in ABLATIONS:
        raise ConfigError(f"unknown ablation '{name}', expected one of {sorted(ABLATIONS)}")
    return apply_overrides(config, ABLATIONS[name])


def start_run(config, debug=False):
    """创建输出目录、配置日志并回显配置"""
    configure_logging(config.out_dir, debug)
    path = save_config(config)
    logger.info(f"Config written: {path}")
    return path


def dataset_dir(config):
    """数据集目录：data_dir，否则为输出目录下的 dataset"""
    return config.data_dir or os.path.join(config.out_dir, DATASET_DIR)


def ensure_dataset(config):
    """
    确保有一个生成数据集可用，没有清单时按配置生成

    Returns:
        DatasetManager: 已加载的数据集
    """
    root = dataset_dir(config)
    if not os.path.isfile(os.path.join(root, MANIFEST_NAME)):
        if config.data_dir:
            raise DataSourceError("dataset manifest not found", path=root)
        gen_dataset(config.synthvid, config.seed, root)
    return DatasetManager(root).load()


def cmd_gen_data(config, debug=False):
    """
    生成合成数据集

    Returns:
        str: 清单路径
    """
    start_run(config, debug)
    manifest = gen_dataset(config.synthvid, config.seed, dataset_dir(config))
    print(manifest)
    return manifest


def _training_source(config):
    """训练数据源，生成数据集只使用训练片段"""
    eval_fraction = config.readout.eval_fraction
    if not config.data_dir:
        train_eps, _ = split_episode_ids(range(config.synthvid.episodes), eval_fraction)
        return open_source(None, config.synthvid, config.seed, train_eps)
    if os.path.isfile(os.path.join(config.data_dir, MANIFEST_NAME)):
        train_eps, _ = DatasetManager(config.data_dir).load().split_episodes(eval_fraction)
        return open_source(config.data_dir, seed=config.seed, episodes=train_eps,
                           flow_noise_sigma=config.synthvid.noise_sigma_flow)
    return open_source(config.data_dir, seed=config.seed)


def cmd_train(config, resume=False, debug=False):
    """
    训练编码器

    Returns:
        TrainResult: 训练结果
    """
    start_run(config, debug)
    result = train_loop(
        config.trainer, _training_source(config), config.augment, config.out_dir,
        config.network.arch(), config.dtype, resume
    )
    print(result.checkpoint_path)
    return result


def cmd_readout(config, debug=False):
    """
    在冻结编码器上训练线性读出并评估mIoU

    Returns:
        dict: 读出结果
    """
    start_run(config, debug)
    manager = ensure_dataset(config)
    results = run_readout(config.readout, manager, config.seed, config.out_dir, config.network.arch())
    print(f"mIoU {results['miou']:.4f}")
    return results


def cmd_check(seed=0, out_dir=None, debug=False):
    """
    运行自检套件，任何一项失败都抛出 CheckFailed

    Returns:
        CheckReport: 报告
    """
    configure_logging(out_dir, debug)
    report = run_check_suite(seed)
    for result in report.results:
        print(f"{'PASS' if result.passed else 'FAIL'}  {result.name:28s} {result.value:.3e}")
    if out_dir:
        with open(os.path.join(out_dir, CHECK_NAME), "w", encoding="utf-8") as f:
            json.dump(report.to_dict(), f, indent=4)
    if not report.passed:
        raise CheckFailed(report)
    return report


def cmd_flo(action, paths):
    """
    .flo 文件工具：inspect 打印尺寸与位移统计，diff 打印端点误差

    Returns:
        dict: 打印的统计
    """
    if action == "inspect":
        if len(paths) != 1:
            raise ConfigError("flo inspect takes exactly one file")
        summary = flow_stats(flo_read_file(paths[0]))
    elif action == "diff":
        if len(paths) != 2:
            raise ConfigError("flo diff takes exactly two files")
        summary = flow_endpoint_error(flo_read_file(paths[0]), flo_read_file(paths[1]))
    else:
        raise ConfigError(f"unknown flo action '{action}'")
    print(json.dumps(summary, indent=4))
    return summary


def _variant_config(config, variant, seed, root):
    """扫描中某个变体、某个种子的配置"""
    run_dir = os.path.join(config.out_dir, variant, f"seed_{seed}")
    config = apply_ablation(config, variant)
    config = dataclasses.replace(config, seed=seed, out_dir=run_dir, data_dir=root)
    return config.resolved()


def _mean(values):
    return float(np.mean(values)) if values else None


def cmd_sweep(config, variants=SWEEP_VARIANTS, seeds=(0, 1, 2), debug=False):
    """
    消融扫描：在共享数据集上对每个变体和种子训练并读出，另加随机编码器基线

    Returns:
        dict: 每个变体的逐种子与平均 mIoU
    """
    start_run(config, debug)
    manager = ensure_dataset(config)
    root = manager.root
    summary = {"dataset": root, "seeds": list(seeds), "variants": {}}

    for variant in (RANDOM_ENCODER,) + tuple(variants):
        scores = []
        for seed in seeds:
            if variant == RANDOM_ENCODER:
                run = dataclasses.replace(config, seed=seed, data_dir=root,
                                          out_dir=os.path.join(config.out_dir, variant, f"seed_{seed}")).resolved()
                readout_cfg = dataclasses.replace(run.readout, encoder_checkpoint=RANDOM_ENCODER)
            else:
                run = _variant_config(config, variant, seed, root)
                save_config(run)
                result = train_loop(run.trainer, _training_source(run), run.augment, run.out_dir,
                                    run.network.arch(), run.dtype)
                readout_cfg = dataclasses.replace(run.readout, encoder_checkpoint=result.checkpoint_path)
            results = run_readout(readout_cfg, manager, seed, run.out_dir, run.network.arch())
            scores.append(results["miou"])
            logger.info(f"Sweep {variant} seed {seed}: mIoU {results['miou']:.4f}")
        summary["variants"][variant] = {"miou": scores, "mean_miou": _mean(scores)}

    path = os.path.join(config.out_dir, SWEEP_NAME)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=4)
    for variant, entry in summary["variants"].items():
        print(f"{variant:12s} {entry['mean_miou']:.4f}")
    return summary
