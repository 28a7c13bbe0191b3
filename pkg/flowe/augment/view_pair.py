"""
构造两个增强视图以及它们之间的稠密对应
"""

from dataclasses import dataclass

import numpy as np

from flowe.core.errors import DimensionError
from flowe.geometry.affine import AffineMap
from flowe.geometry.flow import FlowField
from flowe.geometry.transform import compose_transform
from flowe.augment.affine_sampler import sample_affine, apply_affine_image
from flowe.augment.photometric import color_distort, random_blur


@dataclass(frozen=True, eq=False)
class ViewPair:
    """两个增强视图及其仿射变换"""

    v1: np.ndarray  # 3×H×W
    v2: np.ndarray  # 3×H×W
    A1: AffineMap  # I1 → v1
    A2: AffineMap  # I2 → v2
    source_flow: FlowField  # I1 → I2
    rng_seed: int  # 生成本视图对的种子


def _photometric(view, rng, cfg):
    """颜色扭曲后再模糊"""
    if not cfg.photometric:
        return view
    return random_blur(color_distort(view, rng, cfg), rng, cfg)


def make_view_pair(I1, I2, flow, rng, cfg, force_identity=False):
    """
    生成视图对：先仿射重采样，再颜色扭曲，最后模糊

    几何与光度使用两个独立的子随机流，因此对应关系只取决于 (A1, A2, flow)。

    Args:
        I1 (numpy.ndarray): 3×H×W 第一帧
        I2 (numpy.ndarray): 3×H×W 第二帧
        flow (FlowField): I1 → I2 光流
        rng (numpy.random.Generator): 随机数生成器
        cfg (AugmentConfig): 增强配置
        force_identity (bool): 强制使用恒等仿射（裁剪窗口取左上角）

    Returns:
        tuple: (ViewPair, DenseCorrespondence)
    """
    raw_shape = I1.shape[1:]
    if I2.shape != I1.shape or flow.shape != raw_shape:
        raise DimensionError(f"frames {I1.shape}, {I2.shape} and flow {flow.shape} must share a resolution")

    seed = int(rng.integers(0, 2 ** 63 - 1))
    geo_rng = np.random.default_rng([seed, 0])
    photo_rng = np.random.default_rng([seed, 1])

    crop = tuple(cfg.crop_size)
    if force_identity:
        A1 = A2 = AffineMap((1.0, 0.0, 0.0, 0.0, 1.0, 0.0))
    else:
        A1 = sample_affine(geo_rng, cfg, raw_shape, crop)
        A2 = sample_affine(geo_rng, cfg, raw_shape, crop)

    v1 = _photometric(apply_affine_image(I1, A1, crop), photo_rng, cfg)
    v2 = _photometric(apply_affine_image(I2, A2, crop), photo_rng, cfg)

    T = compose_transform(A1, flow, A2, crop, in_shape=raw_shape)
    return ViewPair(v1, v2, A1, A2, flow, seed), T
