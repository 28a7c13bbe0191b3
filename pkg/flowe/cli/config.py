"""
运行配置：把各模块的配置组合成一棵数据类树，支持JSON文件与点路径覆盖
"""

import os
import dataclasses
from dataclasses import dataclass, field

from flowe.core.config import config_to_dict, merge_config, apply_overrides, load_json, save_json
from flowe.core.errors import ConfigError
from flowe.core.tensor import PRECISION_DTYPES, resolve_dtype
from flowe.augment.config import AugmentConfig
from flowe.network.model import default_arch
from flowe.readout.config import ReadoutConfig
from flowe.synthvid.scene import SynthConfig
from flowe.trainer.config import TrainConfig


CONFIG_NAME = "config.json"


@dataclass(frozen=True)
class NetworkConfig:
    """网络配置"""

    channel_standardize: bool = False
    batch_norm: bool = True  # 投影头和预测头隐藏层的批次标准化

    def arch(self):
        """对应的网络结构"""
        return default_arch(self.channel_standardize, self.batch_norm)


@dataclass(frozen=True)
class RunConfig:
    """
    一次运行的完整配置

    seed 是全局种子，解析时同步到 trainer.seed；
    data_dir 为空时训练使用即时合成数据
    """

    augment: AugmentConfig = field(default_factory=AugmentConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    trainer: TrainConfig = field(default_factory=TrainConfig)
    synthvid: SynthConfig = field(default_factory=SynthConfig)
    readout: ReadoutConfig = field(default_factory=ReadoutConfig)
    seed: int = 0
    out_dir: str = "runs/default"
    data_dir: str = ""
    precision: int = 64

    def __post_init__(self):
        self.validate()

    def validate(self):
        """检查跨模块的约束"""
        if self.precision not in PRECISION_DTYPES:
            raise ConfigError(f"precision must be 32 or 64, got {self.precision}")
        if not self.out_dir:
            raise ConfigError("out_dir must not be empty")
        crop_h, crop_w = self.augment.crop_size
        if crop_h % 8 or crop_w % 8:
            raise ConfigError(f"augment.crop_size {self.augment.crop_size} must be divisible by 8")
        canvas_h, canvas_w = self.synthvid.canvas
        if canvas_h % 8 or canvas_w % 8:
            raise ConfigError(f"synthvid.canvas {self.synthvid.canvas} must be divisible by 8")

    @property
    def dtype(self):
        """训练精度对应的数据类型"""
        return resolve_dtype(self.precision)

    def resolved(self):
        """把全局种子同步到训练配置"""
        if self.trainer.seed == self.seed:
            return self
        return dataclasses.replace(self, trainer=dataclasses.replace(self.trainer, seed=self.seed))


def load_config(path=None, overrides=()):
    """
    读取运行配置：默认值 ← JSON文件 ← 点路径覆盖

    Args:
        path (str): JSON配置文件路径，None 表示只用默认值
        overrides (list): 形如 "trainer.base_lr=0.05" 的覆盖项

    Returns:
        RunConfig: 解析后的配置
    """
    config = RunConfig()
    if path:
        config = merge_config(config, load_json(path))
    config = apply_overrides(config, overrides)
    return config.resolved()


def save_config(config, out_dir=None):
    """
    把完整配置写到输出目录

    Returns:
        str: 写出的路径
    """
    out_dir = out_dir or config.out_dir
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, CONFIG_NAME)
    save_json(path, config_to_dict(config))
    return path
