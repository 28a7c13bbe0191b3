"""
读出评估配置
"""

from dataclasses import dataclass

from flowe.core.errors import ConfigError


RANDOM_ENCODER = "random"
CLASS_WEIGHTINGS = ("balanced", "none")


@dataclass(frozen=True)
class ReadoutConfig:
    """读出配置"""

    epochs: int = 60
    lr: float = 0.1
    momentum: float = 0.9
    batch_size: int = 8
    class_count: int = 4
    encoder_checkpoint: str = RANDOM_ENCODER  # 检查点路径或 "random"
    upsample_logits: bool = True  # False 时把标签下采样到特征分辨率
    eval_fraction: float = 0.25
    overlays: int = 4  # 写出的预测叠加图数量
    class_weighting: str = "balanced"  # "balanced" 按类别像素频率的倒数加权交叉熵

    def __post_init__(self):
        self.validate()

    def validate(self):
        """检查参数范围"""
        if self.class_count < 2:
            raise ConfigError(f"class_count must be at least 2, got {self.class_count}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be non-negative and batch_size positive")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if not 0 < self.eval_fraction < 1:
            raise ConfigError(f"eval_fraction must lie in (0, 1), got {self.eval_fraction}")
        if self.overlays < 0:
            raise ConfigError(f"overlays must be non-negative, got {self.overlays}")
        if self.class_weighting not in CLASS_WEIGHTINGS:
            raise ConfigError(f"class_weighting must be one of {CLASS_WEIGHTINGS}, got '{self.class_weighting}'")

    @property
    def uses_random_encoder(self):
        """是否使用随机初始化的编码器"""
        return self.encoder_checkpoint == RANDOM_ENCODER
