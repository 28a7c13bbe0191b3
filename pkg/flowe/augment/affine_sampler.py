"""
随机仿射采样与图像仿射重采样，随机裁剪折叠进仿射的平移部分
"""

import numpy as np

from flowe.core.errors import ConfigError
from flowe.geometry.affine import AffineMap, affine_from_params
from flowe.geometry.flow import pixel_grid
from flowe.geometry.sampling import bilinear_sample_grid


def _extent_bbox(R, shape):
    """变换后输入图像连续范围 [-0.5, W-0.5]×[-0.5, H-0.5] 的包围盒"""
    height, width = shape
    cx = np.array([-0.5, width - 0.5, width - 0.5, -0.5])
    cy = np.array([-0.5, -0.5, height - 0.5, height - 0.5])
    tx, ty = R.apply(cx, cy)
    return tx.min(), tx.max(), ty.min(), ty.max()


def sample_affine(rng, cfg, in_shape, out_shape=None):
    """
    采样随机仿射 A = 平移(裁剪偏移) ∘ 旋转(θ) ∘ 缩放(s)

    Args:
        rng (numpy.random.Generator): 随机数生成器
        cfg (AugmentConfig): 增强配置
        in_shape (tuple): 输入图像尺寸 (H, W)
        out_shape (tuple): 输出窗口尺寸，默认为 cfg.crop_size

    Returns:
        AffineMap: 输入坐标 → 输出坐标
    """
    out_h, out_w = cfg.crop_size if out_shape is None else out_shape
    scale = rng.uniform(*cfg.scale_range)
    angle = rng.uniform(*cfg.rotation_range_deg)
    R = affine_from_params(scale, angle)

    xmin, xmax, ymin, ymax = _extent_bbox(R, in_shape)
    slack_x = (xmax - xmin) - out_w
    slack_y = (ymax - ymin) - out_h
    if slack_x < -1e-9 or slack_y < -1e-9:
        raise ConfigError(
            f"crop {out_h}x{out_w} does not fit input {in_shape[0]}x{in_shape[1]} "
            f"at scale {scale:.4g}, rotation {angle:.4g}°"
        )
    offset_x = rng.uniform(0.0, max(slack_x, 0.0))
    offset_y = rng.uniform(0.0, max(slack_y, 0.0))

    a, b, _, c, d, _ = R.m
    return AffineMap((a, b, -xmin - offset_x - 0.5, c, d, -ymin - offset_y - 0.5))


def apply_affine_image(img, A, out_shape):
    """
    按仿射重采样图像：out(x) = img(A⁻¹(x))，越界填零

    Args:
        img (numpy.ndarray): C×H×W 图像
        A (AffineMap): 输入坐标 → 输出坐标
        out_shape (tuple): 输出尺寸 (H, W)

    Returns:
        numpy.ndarray: C×out_H×out_W 图像
    """
    xs, ys = pixel_grid(out_shape)
    src_x, src_y = A.inverse().apply(xs, ys)
    out, _ = bilinear_sample_grid(img, src_x, src_y)
    return out
