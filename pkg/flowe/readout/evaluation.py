"""
读出评估流程：加载编码器、按片段划分数据、训练读出头、计算mIoU并写出结果
"""

import os
import json

import numpy as np

from flowe.core.errors import DataSourceError, FlowEError
from flowe.core.logging_setup import get_logger
from flowe.core.system import System
from flowe.geometry.image_io import save_image
from flowe.network.model import init_params, default_arch
from flowe.network.checkpoint import load_checkpoint_file
from flowe.readout.linear_head import extract_features, train_linear_readout, predict_labels
from flowe.readout.metrics import eval_miou


logger = get_logger('readout')

RESULTS_NAME = "readout.json"
OVERLAY_DIR = "overlays"

# 背景、圆、矩形、三角形
PALETTE = np.array([
    [0.0, 0.0, 0.0],
    [0.9, 0.2, 0.2],
    [0.2, 0.8, 0.2],
    [0.2, 0.4, 0.95],
    [0.9, 0.8, 0.1],
    [0.7, 0.3, 0.8],
])
OVERLAY_ALPHA = 0.5


def load_encoder(cfg, seed, arch=None):
    """
    读出所用的编码器：检查点中的在线网络，或 "random" 时的随机初始化

    Args:
        cfg (ReadoutConfig): 读出配置
        seed (int): 随机初始化的种子
        arch (ArchSpec): 期望的网络结构

    Returns:
        ModelParams: 参数（float64）
    """
    arch = arch or default_arch()
    if cfg.uses_random_encoder:
        return init_params(np.random.default_rng([seed, 0]), arch)
    if not os.path.isfile(cfg.encoder_checkpoint):
        raise DataSourceError("encoder checkpoint not found", path=cfg.encoder_checkpoint)
    checkpoint = load_checkpoint_file(cfg.encoder_checkpoint, expected_arch=arch)
    return checkpoint.params.astype(np.float64)


def _load_frames(manager, episodes):
    images, labels, keys = [], [], []
    for episode, frame in manager.get_frames(episodes):
        image, label = manager.load_labelled(episode, frame)
        images.append(image)
        labels.append(label)
        keys.append((episode, frame))
    return np.stack(images), np.stack(labels), keys


def colorize(labels):
    """标签 → 3×H×W 颜色图"""
    return np.moveaxis(PALETTE[np.asarray(labels) % len(PALETTE)], -1, 0)


def write_overlays(out_dir, images, predictions, keys):
    """
    写出预测叠加图：颜色编码的预测与原图按比例混合

    Returns:
        list: 写出的文件路径
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for image, pred, (episode, frame) in zip(images, predictions, keys):
        blended = (1.0 - OVERLAY_ALPHA) * image + OVERLAY_ALPHA * colorize(pred)
        path = os.path.join(out_dir, f"episode_{episode:04d}_frame_{frame:04d}.png")
        save_image(path, blended)
        paths.append(path)
    return paths


def write_results(path, results):
    """写出读出结果JSON"""
    try:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(results, f, indent=4)
    except OSError as e:
        raise DataSourceError(f"cannot write readout results: {e}", path=path)
    return path


class ReadoutSystem(System):
    """读出评估系统"""

    def __init__(self, cfg, manager, seed=0, out_dir=None, arch=None):
        """
        初始化读出评估系统

        Args:
            cfg (ReadoutConfig): 读出配置
            manager (DatasetManager): 已加载的数据集
            seed (int): 种子
            out_dir (str): 输出目录，None 表示不写文件
            arch (ArchSpec): 网络结构
        """
        super().__init__()
        self.cfg = cfg
        self.manager = manager
        self.seed = seed
        self.out_dir = out_dir
        self.arch = arch or default_arch()
        self.encoder = None
        self.results = None

    def initialize(self):
        """加载编码器"""
        self.encoder = load_encoder(self.cfg, self.seed, self.arch)
        super().initialize()

    def run(self):
        """
        执行读出评估

        Returns:
            dict: 结果（mIoU、逐类IoU、混淆矩阵、损失曲线）
        """
        self.initialize()
        try:
            self.results = self.update(0)
        finally:
            self.shutdown()
        return self.results

    def update(self, step):
        """训练读出头并评估"""
        cfg = self.cfg
        train_eps, eval_eps = self.manager.split_episodes(cfg.eval_fraction)
        try:
            train_images, train_labels, _ = _load_frames(self.manager, train_eps)
            eval_images, eval_labels, eval_keys = _load_frames(self.manager, eval_eps)
        except (OSError, FlowEError) as e:
            raise DataSourceError(f"cannot load readout frames: {e}", path=self.manager.root)

        digest_before = self.encoder.digest("encoder")
        train_features = extract_features(self.encoder, train_images, cfg.batch_size)
        eval_features = extract_features(self.encoder, eval_images, cfg.batch_size)

        head = train_linear_readout(train_features, train_labels, cfg, np.random.default_rng([self.seed, 3]))
        predictions = predict_labels(head, eval_features, eval_labels.shape[-2:])
        train_pred = predict_labels(head, train_features, train_labels.shape[-2:])
        if self.encoder.digest("encoder") != digest_before:
            raise FlowEError("encoder weights changed during readout")

        evaluation = eval_miou(list(predictions), list(eval_labels), cfg.class_count)
        results = {
            "encoder": cfg.encoder_checkpoint,
            "encoder_digest": digest_before,
            "train_frames": int(len(train_images)),
            "eval_frames": int(len(eval_images)),
            "train_pixel_accuracy": float(np.mean(train_pred == train_labels)),
            "eval_pixel_accuracy": float(np.mean(predictions == eval_labels)),
            "class_weighting": cfg.class_weighting,
            "loss_curve": head.loss_curve,
            **evaluation.to_dict()
        }
        logger.info(
            f"Readout ({cfg.encoder_checkpoint}): mIoU {evaluation.miou:.4f} over {len(eval_images)} frames"
        )

        if self.out_dir:
            os.makedirs(self.out_dir, exist_ok=True)
            write_results(os.path.join(self.out_dir, RESULTS_NAME), results)
            if cfg.overlays:
                n = cfg.overlays
                write_overlays(os.path.join(self.out_dir, OVERLAY_DIR), eval_images[:n], predictions[:n],
                               eval_keys[:n])
        return results


def run_readout(cfg, manager, seed=0, out_dir=None, arch=None):
    """读出评估的便捷入口"""
    return ReadoutSystem(cfg, manager, seed, out_dir, arch).run()
