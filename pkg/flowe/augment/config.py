"""
数据增强配置
"""

from dataclasses import dataclass

from flowe.core.errors import ConfigError


@dataclass(frozen=True)
class AugmentConfig:
    """数据增强配置"""

    scale_range: tuple = (0.5, 2.0)  # 随机缩放范围
    rotation_range_deg: tuple = (-30.0, 30.0)  # 随机旋转范围（度）
    crop_size: tuple = (32, 64)  # 输出视图尺寸 (H, W)
    color_strength: tuple = (0.8, 0.8, 0.8, 0.2)  # 亮度、对比度、饱和度、色调
    color_prob: float = 0.8  # 颜色抖动概率
    grayscale_prob: float = 0.2  # 灰度化概率
    blur_sigma_range: tuple = (0.1, 2.0)  # 高斯模糊sigma范围
    blur_prob: float = 0.5  # 高斯模糊概率
    photometric: bool = True  # 光度增强总开关

    def __post_init__(self):
        self.validate()

    def validate(self):
        """检查参数范围"""
        lo, hi = self.scale_range
        if not 0 < lo <= hi:
            raise ConfigError(f"scale_range must satisfy 0 < lo <= hi, got {self.scale_range}")
        lo, hi = self.rotation_range_deg
        if lo > hi:
            raise ConfigError(f"rotation_range_deg must satisfy lo <= hi, got {self.rotation_range_deg}")
        lo, hi = self.blur_sigma_range
        if not 0 < lo <= hi:
            raise ConfigError(f"blur_sigma_range must satisfy 0 < lo <= hi, got {self.blur_sigma_range}")
        if len(self.crop_size) != 2 or min(self.crop_size) <= 0:
            raise ConfigError(f"crop_size must be two positive integers, got {self.crop_size}")
        if len(self.color_strength) != 4 or min(self.color_strength) < 0:
            raise ConfigError(f"color_strength must be four non-negative values, got {self.color_strength}")
        for name in ("color_prob", "grayscale_prob", "blur_prob"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {value}")


def identity_config(crop_size):
    """
    不做任何增强的配置：单位缩放、零旋转、关闭光度增强

    Args:
        crop_size (tuple): 输出尺寸 (H, W)

    Returns:
        AugmentConfig: 配置
    """
    return AugmentConfig(
        scale_range=(1.0, 1.0),
        rotation_range_deg=(0.0, 0.0),
        crop_size=tuple(crop_size),
        color_prob=0.0,
        grayscale_prob=0.0,
        blur_prob=0.0,
        photometric=False
    )
