"""
合成视频场景描述：带纹理的背景做全局仿射自运动，若干刚体形状按深度顺序运动
"""

from dataclasses import dataclass, field

import numpy as np

from flowe.core.errors import ConfigError


SHAPE_CLASSES = ("circle", "rectangle", "triangle")
# 类别编号：0 为背景，形状类别从 1 开始
CLASS_IDS = {kind: index + 1 for index, kind in enumerate(SHAPE_CLASSES)}
CLASS_COUNT = len(SHAPE_CLASSES) + 1
# 每个类别固定一种物体坐标系下的纹理
CLASS_TEXTURES = {"circle": "stripes", "rectangle": "checker", "triangle": "rings"}


@dataclass(frozen=True)
class ShapeSpec:
    """刚体形状及其运动"""

    kind: str
    center: tuple  # t=0 时的中心 (x, y)
    size: tuple  # 圆与三角形为 (r, r)，矩形为半宽半高
    angle_deg: float = 0.0
    velocity: tuple = (0.0, 0.0)  # 像素/帧
    angular_velocity: float = 0.0  # 度/帧
    scale_rate: float = 0.0  # 每帧尺度变化率
    color: tuple = (1.0, 1.0, 1.0)
    texture_period: float = 6.0

    def __post_init__(self):
        if self.kind not in SHAPE_CLASSES:
            raise ConfigError(f"unknown shape kind '{self.kind}'")
        if min(self.size) <= 0:
            raise ConfigError(f"shape size must be positive, got {self.size}")
        if self.scale_rate <= -1.0:
            raise ConfigError(f"scale_rate must be greater than -1, got {self.scale_rate}")

    @property
    def class_id(self):
        """类别编号"""
        return CLASS_IDS[self.kind]

    @property
    def texture(self):
        """纹理类型"""
        return CLASS_TEXTURES[self.kind]


@dataclass(frozen=True)
class EgoMotion:
    """背景每帧的自运动：绕画布中心缩放旋转再平移"""

    shift: tuple = (0.0, 0.0)
    rotation_deg: float = 0.0
    scale_rate: float = 0.0


@dataclass(frozen=True)
class SceneSpec:
    """
    一个合成视频片段的完整描述

    Args:
        canvas (tuple): 画布尺寸 (H, W)
        shapes (tuple): ShapeSpec 元组
        depth_order (tuple): 从远到近的形状下标排列
        ego (EgoMotion): 背景自运动
        texture_seed (int): 背景纹理种子
        noise_sigma_flow (float): 光流噪声标准差（像素）
        supersample (int): 每个轴的超采样数
    """

    canvas: tuple = (64, 128)
    shapes: tuple = ()
    depth_order: tuple = ()
    ego: EgoMotion = field(default_factory=EgoMotion)
    texture_seed: int = 0
    noise_sigma_flow: float = 0.0
    supersample: int = 3

    def __post_init__(self):
        if len(self.canvas) != 2 or min(self.canvas) <= 0:
            raise ConfigError(f"canvas must be two positive integers, got {self.canvas}")
        if sorted(self.depth_order) != list(range(len(self.shapes))):
            raise ConfigError(f"depth_order {self.depth_order} is not a permutation of the shapes")
        if self.noise_sigma_flow < 0:
            raise ConfigError(f"noise_sigma_flow must be non-negative, got {self.noise_sigma_flow}")
        if self.supersample < 1:
            raise ConfigError(f"supersample must be positive, got {self.supersample}")

    @property
    def num_shapes(self):
        """形状数量"""
        return len(self.shapes)


@dataclass(frozen=True)
class SynthConfig:
    """合成数据配置"""

    canvas: tuple = (64, 128)
    num_shapes: int = 3
    episodes: int = 16
    frames_per_episode: int = 8
    frame_gap: int = 1
    noise_sigma_flow: float = 0.0
    size_range: tuple = (7.0, 14.0)
    max_speed: float = 2.5
    max_angular_velocity: float = 3.0
    max_scale_rate: float = 0.02
    ego_max_shift: float = 1.5
    ego_max_rotation_deg: float = 0.5
    ego_max_scale_rate: float = 0.01
    supersample: int = 3

    def __post_init__(self):
        self.validate()

    def validate(self):
        """检查参数范围"""
        if len(self.canvas) != 2 or min(self.canvas) <= 0:
            raise ConfigError(f"canvas must be two positive integers, got {self.canvas}")
        if self.num_shapes < 0 or self.episodes < 1:
            raise ConfigError("num_shapes must be non-negative and episodes positive")
        if self.frame_gap < 1 or self.frames_per_episode <= self.frame_gap:
            raise ConfigError(
                f"frames_per_episode ({self.frames_per_episode}) must exceed frame_gap ({self.frame_gap}) >= 1"
            )
        if self.noise_sigma_flow < 0:
            raise ConfigError(f"noise_sigma_flow must be non-negative, got {self.noise_sigma_flow}")
        lo, hi = self.size_range
        if not 0 < lo <= hi:
            raise ConfigError(f"size_range must satisfy 0 < lo <= hi, got {self.size_range}")
        if self.max_scale_rate >= 1 or self.ego_max_scale_rate >= 1:
            raise ConfigError("scale rates must be below 1")


def static_scene(canvas=(64, 128), shapes=(), texture_seed=0):
    """无运动的场景，深度顺序为形状顺序"""
    return SceneSpec(canvas=tuple(canvas), shapes=tuple(shapes), depth_order=tuple(range(len(shapes))),
                     texture_seed=texture_seed)


def random_scene(seed, cfg=None):
    """
    生成随机场景

    Args:
        seed: 整数或整数序列，作为随机数种子
        cfg (SynthConfig): 合成数据配置

    Returns:
        SceneSpec: 场景描述
    """
    cfg = SynthConfig() if cfg is None else cfg
    rng = np.random.default_rng(seed)
    height, width = cfg.canvas

    shapes = []
    for _ in range(cfg.num_shapes):
        kind = SHAPE_CLASSES[int(rng.integers(len(SHAPE_CLASSES)))]
        radius = rng.uniform(*cfg.size_range)
        if kind == "rectangle":
            size = (radius, radius * rng.uniform(0.5, 1.0))
        else:
            size = (radius, radius)
        shapes.append(ShapeSpec(
            kind=kind,
            center=(rng.uniform(0.0, width - 1.0), rng.uniform(0.0, height - 1.0)),
            size=size,
            angle_deg=rng.uniform(-180.0, 180.0),
            velocity=tuple(rng.uniform(-cfg.max_speed, cfg.max_speed, size=2)),
            angular_velocity=rng.uniform(-cfg.max_angular_velocity, cfg.max_angular_velocity),
            scale_rate=rng.uniform(-cfg.max_scale_rate, cfg.max_scale_rate),
            color=tuple(rng.uniform(0.3, 1.0, size=3)),
            texture_period=rng.uniform(4.0, 8.0)
        ))

    ego = EgoMotion(
        shift=tuple(rng.uniform(-cfg.ego_max_shift, cfg.ego_max_shift, size=2)),
        rotation_deg=rng.uniform(-cfg.ego_max_rotation_deg, cfg.ego_max_rotation_deg),
        scale_rate=rng.uniform(-cfg.ego_max_scale_rate, cfg.ego_max_scale_rate)
    )
    return SceneSpec(
        canvas=tuple(cfg.canvas),
        shapes=tuple(shapes),
        depth_order=tuple(int(i) for i in rng.permutation(len(shapes))),
        ego=ego,
        texture_seed=int(rng.integers(0, 2 ** 31 - 1)),
        noise_sigma_flow=cfg.noise_sigma_flow,
        supersample=cfg.supersample
    )
