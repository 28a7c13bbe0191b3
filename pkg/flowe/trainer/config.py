"""
训练配置
"""

from dataclasses import dataclass, field

from flowe.core.errors import ConfigError


OPTIMIZERS = ("sgd_momentum", "lars")
EMA_SCHEDULES = ("cosine", "constant")


@dataclass(frozen=True)
class AblationConfig:
    """消融开关"""

    pixel_based: bool = True  # False 时在编码器后做全局平均池化
    use_affine: bool = True  # False 时强制恒等仿射
    use_flow: bool = True  # False 时强制零光流
    same_frame: bool = False  # 两个视图都取自第一帧，光流为零


@dataclass(frozen=True)
class TrainConfig:
    """训练配置"""

    total_steps: int = 2000
    batch_size: int = 8
    base_lr: float = 0.1
    weight_decay: float = 1e-6
    ema_tau: float = 0.996
    ema_schedule: str = "cosine"
    optimizer: str = "lars"
    momentum: float = 0.9
    lars_eps: float = 1e-9
    lars_trust: float = 0.01
    ablation: AblationConfig = field(default_factory=AblationConfig)
    use_fb_check: bool = True  # 数据源提供反向光流时做前后向一致性检查
    fb_alpha: float = 0.01
    fb_beta: float = 0.5
    seed: int = 0
    checkpoint_every: int = 500
    log_every: int = 50

    def __post_init__(self):
        self.validate()

    def validate(self):
        """检查参数范围"""
        if self.total_steps < 0:
            raise ConfigError(f"total_steps must be non-negative, got {self.total_steps}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if self.base_lr <= 0:
            raise ConfigError(f"base_lr must be positive, got {self.base_lr}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be non-negative, got {self.weight_decay}")
        if not 0 < self.ema_tau <= 1:
            raise ConfigError(f"ema_tau must lie in (0, 1], got {self.ema_tau}")
        if self.ema_schedule not in EMA_SCHEDULES:
            raise ConfigError(f"ema_schedule must be one of {EMA_SCHEDULES}, got '{self.ema_schedule}'")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}, got '{self.optimizer}'")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.checkpoint_every < 1 or self.log_every < 1:
            raise ConfigError("checkpoint_every and log_every must be positive")
