"""
训练系统：一个训练步包括视图增强、在线/目标前向、上采样、按光流变形、掩码损失、反向传播、优化器更新和EMA更新
"""

import os
import json
import hashlib
import dataclasses
from dataclasses import dataclass, field

import numpy as np

from flowe.core.errors import ConfigError, DataSourceError
from flowe.core.logging_setup import get_logger
from flowe.core.system import System
from flowe.augment.view_pair import make_view_pair
from flowe.geometry.flow import FlowField, fb_consistency
from flowe.geometry.sampling import upsample_bilinear, upsample_bilinear_adjoint, warp_features
from flowe.network.model import init_params, forward, backward, default_arch
from flowe.network.checkpoint import save_checkpoint_file, load_checkpoint_file
from flowe.trainer.loss import flowe_loss
from flowe.trainer.optimizers import (
    OptimizerState, sgd_momentum_step, lars_step, ema_update, global_grad_norm, check_finite
)
from flowe.trainer.schedules import cosine_lr, ema_tau_schedule


logger = get_logger('trainer')

METRICS_NAME = "metrics.jsonl"
CHECKPOINT_DIR = "checkpoints"
LATEST_NAME = "latest.flwe"
RUN_CONFIG_NAME = "run_config.json"

# 续训时允许改变的字段：延长训练，或调整日志和检查点节奏
RESUMABLE_FIELDS = ("total_steps", "log_every", "checkpoint_every")


def config_hash(config, exclude=()):
    """配置数据类的SHA-256摘要"""
    values = {k: v for k, v in dataclasses.asdict(config).items() if k not in exclude}
    return hashlib.sha256(json.dumps(values, sort_keys=True).encode("utf-8")).hexdigest()


@dataclass(eq=False)
class TrainState:
    """训练器拥有的唯一可变状态"""

    online: object  # ModelParams
    target: object  # ModelParams（无预测头）
    optimizer: OptimizerState
    step: int = 0


@dataclass
class StepReport:
    """单步训练报告，指标日志的一行"""

    step: int
    loss: float
    valid_pixel_fraction: float
    lr: float
    ema_tau_effective: float
    grad_norm: float
    skipped: bool = False
    valid_examples: int = 0


@dataclass(eq=False)
class PreparedBatch:
    """增强后的视图批次"""

    v1: np.ndarray  # N×3×H×W
    v2: np.ndarray  # N×3×H×W
    correspondences: list  # DenseCorrespondence 列表
    pooled: bool = False


@dataclass(eq=False)
class BatchLoss:
    """批次损失及其梯度"""

    loss: float
    grads: dict
    relu_patterns: list
    valid_pixels: int
    total_pixels: int
    valid_examples: int


@dataclass
class TrainResult:
    """train_loop 的结果"""

    state: TrainState
    reports: list = field(default_factory=list)
    checkpoint_path: str = None


def init_state(cfg, arch=None, dtype=np.float64):
    """
    初始化训练状态：He初始化在线网络，目标网络为其不含预测头的副本

    Args:
        cfg (TrainConfig): 训练配置
        arch (ArchSpec): 网络结构
        dtype: 参数数据类型

    Returns:
        TrainState: 初始状态
    """
    online = init_params(np.random.default_rng([cfg.seed, 0]), arch or default_arch(), dtype)
    return TrainState(online, online.target_copy(), OptimizerState.zeros_like(online), 0)


def step_rng(seed, step):
    """训练步的增强随机数"""
    return np.random.default_rng([seed, step, 1])


def _sample_flow(sample, cfg):
    """按消融开关与一致性检查得到该样本实际使用的 (I2, 光流)"""
    ablation = cfg.ablation
    shape = sample.I1.shape[1:]
    if ablation.same_frame:
        return sample.I1, FlowField.zeros(shape)
    if not ablation.use_flow:
        return sample.I2, FlowField.zeros(shape)
    flow = sample.flow
    if cfg.use_fb_check and sample.flow_bwd is not None:
        flow = flow.with_valid(flow.valid & fb_consistency(flow, sample.flow_bwd, cfg.fb_alpha, cfg.fb_beta))
    return sample.I2, flow


def prepare_batch(batch, cfg, augment_cfg, rng, dtype=np.float64):
    """
    为批次中每个样本生成视图对与稠密对应

    Args:
        batch (list): PairSample 列表
        cfg (TrainConfig): 训练配置
        augment_cfg (AugmentConfig): 增强配置
        rng (numpy.random.Generator): 本步的随机数
        dtype: 视图数据类型

    Returns:
        PreparedBatch: 视图批次
    """
    v1, v2, correspondences = [], [], []
    for sample in batch:
        I2, flow = _sample_flow(sample, cfg)
        pair, T = make_view_pair(sample.I1, I2, flow, rng, augment_cfg, force_identity=not cfg.ablation.use_affine)
        v1.append(pair.v1)
        v2.append(pair.v2)
        correspondences.append(T)
    return PreparedBatch(
        np.stack(v1).astype(dtype), np.stack(v2).astype(dtype), correspondences,
        pooled=not cfg.ablation.pixel_based
    )


def batch_loss(online, target, prepared, need_grad=True):
    """
    批次损失：对掩码非空的样本取平均

    Args:
        online (ModelParams): 在线网络
        target (ModelParams): 目标网络，不参与求导
        prepared (PreparedBatch): 视图批次
        need_grad (bool): 是否计算在线网络梯度

    Returns:
        BatchLoss: 损失、梯度与统计
    """
    pooled = prepared.pooled
    _, _, p1, trace = forward(online, prepared.v1, keep_trace=True, pooled=pooled)
    _, z2, _, _ = forward(target, prepared.v2, pooled=pooled)

    height, width = prepared.v1.shape[-2:]
    feat_h, feat_w = p1.shape[-2:]
    losses, grad_p1 = [], np.zeros_like(p1)
    valid_pixels = 0
    for i, T in enumerate(prepared.correspondences):
        if pooled:
            mask = np.ones((1, 1), dtype=bool)
            loss, grad = flowe_loss(p1[i], z2[i], mask)
        else:
            p1_up = upsample_bilinear(p1[i], height, width)
            p2, mask = warp_features(upsample_bilinear(z2[i], height, width), T)
            loss, grad_up = flowe_loss(p1_up, p2, mask)
            grad = upsample_bilinear_adjoint(grad_up, feat_h, feat_w)
        count = int(mask.sum())
        valid_pixels += count
        if count:
            losses.append(loss)
            grad_p1[i] = grad

    n_valid = len(losses)
    total_pixels = len(prepared.correspondences) * (1 if pooled else height * width)
    if n_valid == 0:
        return BatchLoss(0.0, None, trace.relu_patterns(), 0, total_pixels, 0)
    loss = float(sum(losses)) / n_valid
    grads = backward(online, trace, grad_p1 / n_valid) if need_grad else None
    return BatchLoss(loss, grads, trace.relu_patterns(), valid_pixels, total_pixels, n_valid)


def loss_objective(target, prepared):
    """固定视图和目标网络的批次损失，供梯度检查使用"""
    def objective(params, need_grad):
        result = batch_loss(params, target, prepared, need_grad)
        return result.loss, result.grads, result.relu_patterns
    return objective


def train_step(state, batch, cfg, augment_cfg):
    """
    执行一个训练步

    Args:
        state (TrainState): 当前状态
        batch (list): PairSample 列表
        cfg (TrainConfig): 训练配置
        augment_cfg (AugmentConfig): 增强配置

    Returns:
        tuple: (新状态, StepReport)
    """
    step = state.step
    lr = cosine_lr(step, cfg.total_steps, cfg.base_lr)
    tau = ema_tau_schedule(step, cfg.total_steps, cfg.ema_tau, cfg.ema_schedule)
    prepared = prepare_batch(batch, cfg, augment_cfg, step_rng(cfg.seed, step), state.online.dtype)
    result = batch_loss(state.online, state.target, prepared)
    fraction = result.valid_pixels / result.total_pixels if result.total_pixels else 0.0

    if result.valid_examples == 0:
        logger.warning(f"Step {step}: no valid correspondences in the whole batch, step skipped")
        report = StepReport(step, 0.0, fraction, lr, tau, 0.0, skipped=True, valid_examples=0)
        return TrainState(state.online, state.target, state.optimizer, step + 1), report

    check_finite(result.grads)
    grad_norm = global_grad_norm(result.grads)
    if cfg.optimizer == "lars":
        online, optimizer = lars_step(
            state.online, result.grads, lr, cfg.momentum, cfg.weight_decay, state.optimizer,
            eps=cfg.lars_eps, trust=cfg.lars_trust
        )
    else:
        online, optimizer = sgd_momentum_step(
            state.online, result.grads, lr, cfg.momentum, cfg.weight_decay, state.optimizer
        )
    target = ema_update(online, state.target, tau)

    report = StepReport(step, result.loss, fraction, lr, tau, grad_norm, valid_examples=result.valid_examples)
    return TrainState(online, target, optimizer, step + 1), report


class TrainSystem(System):
    """训练系统，管理状态、指标日志和检查点节奏"""

    def __init__(self, cfg, augment_cfg, source, out_dir=None, arch=None, dtype=np.float64, resume=False):
        """
        初始化训练系统

        Args:
            cfg (TrainConfig): 训练配置
            augment_cfg (AugmentConfig): 增强配置
            source (DataSource): 数据源
            out_dir (str): 输出目录，None 表示不写文件
            arch (ArchSpec): 网络结构
            dtype: 参数数据类型
            resume (bool): 是否从最新检查点继续
        """
        super().__init__()
        self.cfg = cfg
        self.augment_cfg = augment_cfg
        self.source = source
        self.out_dir = out_dir
        self.arch = arch or default_arch()
        self.dtype = np.dtype(dtype)
        self.resume = resume
        self.state = None
        self.reports = []
        self.metrics_file = None
        self.last_checkpoint = None

    @property
    def checkpoint_dir(self):
        """检查点目录"""
        return os.path.join(self.out_dir, CHECKPOINT_DIR) if self.out_dir else None

    @property
    def latest_path(self):
        """最新检查点路径"""
        return os.path.join(self.checkpoint_dir, LATEST_NAME) if self.out_dir else None

    def initialize(self):
        """创建或恢复训练状态，打开指标日志"""
        resumed = False
        if self.resume:
            if not self.out_dir or not os.path.isfile(self.latest_path):
                raise DataSourceError("no checkpoint to resume from", path=self.latest_path)
            self.state = self._load_state(self.latest_path)
            resumed = True
            logger.info(f"Resumed from step {self.state.step}")
        else:
            self.state = init_state(self.cfg, self.arch, self.dtype)

        if self.out_dir:
            os.makedirs(self.checkpoint_dir, exist_ok=True)
            metrics_path = os.path.join(self.out_dir, METRICS_NAME)
            if resumed:
                self._truncate_metrics(metrics_path, self.state.step)
            self.metrics_file = open(metrics_path, "a" if resumed else "w", encoding="utf-8")
            if not resumed:
                self._write_run_config()
                self.save_checkpoint()

        logger.info(
            f"Training: {self.cfg.total_steps} steps, batch {self.cfg.batch_size}, optimizer {self.cfg.optimizer}, "
            f"{self.state.online.parameter_count()} parameters, arch {self.state.online.arch_hash[:12]}"
        )
        super().initialize()

    def _run_config(self):
        return {
            "train_config_hash": config_hash(self.cfg, RESUMABLE_FIELDS),
            "augment_config_hash": config_hash(self.augment_cfg),
        }

    def _write_run_config(self):
        path = os.path.join(self.checkpoint_dir, RUN_CONFIG_NAME)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self._run_config(), f, indent=2)

    def _check_run_config(self):
        """恢复时比较已保存的训练与增强配置摘要"""
        path = os.path.join(self.checkpoint_dir, RUN_CONFIG_NAME)
        if not os.path.isfile(path):
            logger.warning(f"No {RUN_CONFIG_NAME} next to the checkpoint, configuration not verified")
            return
        with open(path, "r", encoding="utf-8") as f:
            stored = json.load(f)
        for key, value in self._run_config().items():
            if stored.get(key) != value:
                raise ConfigError(f"{key} differs from the interrupted run, refusing to resume")

    def _load_state(self, path):
        self._check_run_config()
        checkpoint = load_checkpoint_file(path, expected_arch=self.arch)
        if checkpoint.target is None or checkpoint.optimizer_state is None:
            raise DataSourceError("checkpoint lacks target network or optimizer state", path=path)
        if checkpoint.step > self.cfg.total_steps:
            raise ConfigError(f"checkpoint step {checkpoint.step} exceeds total_steps {self.cfg.total_steps}")
        if checkpoint.params.dtype != self.dtype:
            raise ConfigError(f"checkpoint precision {checkpoint.params.dtype} differs from {self.dtype}")
        return TrainState(checkpoint.params, checkpoint.target, OptimizerState(checkpoint.optimizer_state),
                          checkpoint.step)

    @staticmethod
    def _truncate_metrics(path, step):
        """删除恢复点之后的指标行"""
        if not os.path.isfile(path):
            return
        with open(path, "r", encoding="utf-8") as f:
            kept = [line for line in f if line.strip() and json.loads(line)["step"] < step]
        with open(path, "w", encoding="utf-8") as f:
            f.writelines(kept)

    def save_checkpoint(self):
        """保存当前步的检查点，并更新 latest"""
        if not self.out_dir:
            return None
        state = self.state
        velocity = state.optimizer.velocity
        path = os.path.join(self.checkpoint_dir, f"step_{state.step:06d}.flwe")
        try:
            save_checkpoint_file(path, state.online, velocity, state.step, state.target)
            save_checkpoint_file(self.latest_path, state.online, velocity, state.step, state.target)
        except OSError as e:
            raise DataSourceError(f"cannot write checkpoint: {e}", path=path, step=state.step)
        self.last_checkpoint = path
        logger.info(f"Checkpoint saved: {path}")
        return path

    def update(self, step):
        """
        执行一个训练步

        Args:
            step (int): 训练步，必须等于当前状态的步数
        """
        if step != self.state.step:
            raise ConfigError(f"TrainSystem expected step {self.state.step}, got {step}")

        batch = self.source.batch(step, self.cfg.batch_size)
        self.state, report = train_step(self.state, batch, self.cfg, self.augment_cfg)
        self.reports.append(report)

        if self.metrics_file is not None:
            try:
                self.metrics_file.write(json.dumps(dataclasses.asdict(report)) + "\n")
                self.metrics_file.flush()
            except OSError as e:
                raise DataSourceError(f"cannot write metrics: {e}", path=self.out_dir, step=step)

        if step % self.cfg.log_every == 0 or self.state.step == self.cfg.total_steps:
            logger.info(
                f"step {step:6d} loss {report.loss:.5f} valid {report.valid_pixel_fraction:.3f} "
                f"lr {report.lr:.5g} tau {report.ema_tau_effective:.6f} |g| {report.grad_norm:.4g}"
            )
        if self.state.step % self.cfg.checkpoint_every == 0 and self.state.step < self.cfg.total_steps:
            self.save_checkpoint()
        return report

    def run(self, stop_after=None):
        """
        运行到 total_steps，或在 stop_after 步处停下

        Returns:
            TrainResult: 训练结果
        """
        self.initialize()
        try:
            end = self.cfg.total_steps if stop_after is None else min(stop_after, self.cfg.total_steps)
            for step in range(self.state.step, end):
                self.update(step)
        finally:
            self.shutdown()
        return TrainResult(self.state, self.reports, self.last_checkpoint)

    def shutdown(self):
        """保存最终检查点并关闭日志"""
        if self.state is not None and self.initialized:
            self.save_checkpoint()
        if self.metrics_file is not None:
            self.metrics_file.close()
            self.metrics_file = None
        super().shutdown()


def train_loop(cfg, source, augment_cfg, out_dir=None, arch=None, dtype=np.float64, resume=False):
    """
    完整训练流程

    Args:
        cfg (TrainConfig): 训练配置
        source (DataSource): 数据源
        augment_cfg (AugmentConfig): 增强配置
        out_dir (str): 输出目录
        arch (ArchSpec): 网络结构
        dtype: 参数数据类型
        resume (bool): 是否从最新检查点继续

    Returns:
        TrainResult: 最终状态、每步报告和最终检查点路径
    """
    return TrainSystem(cfg, augment_cfg, source, out_dir, arch, dtype, resume).run()
