"""
增强视图之间的光流变换复合

对第一个视图网格上的每个像素 x：
    y = A1⁻¹(x)            回到原始帧 I1
    d = M(y)               双线性采样光流
    T(x) = A2(y + d)       进入第二个视图
"""

import numpy as np

from flowe.core.errors import DimensionError
from flowe.geometry.flow import DenseCorrespondence, pixel_grid
from flowe.geometry.sampling import bilinear_sample_grid, in_bounds, sample_plane_validity


def compose_transform(A1, M, A2, out_shape, v2_shape=None, in_shape=None):
    """
    复合仿射与光流，得到两个增强视图之间的稠密对应

    Args:
        A1 (AffineMap): I1坐标 → v1坐标
        M (FlowField): 定义在I1原始网格上的光流 I1 → I2
        A2 (AffineMap): I2坐标 → v2坐标
        out_shape (tuple): v1网格尺寸 (H, W)
        v2_shape (tuple): v2网格尺寸，默认与out_shape相同
        in_shape (tuple): 原始帧尺寸，给出时必须与光流尺寸一致

    Returns:
        DenseCorrespondence: v1网格上的对应关系
    """
    out_h, out_w = out_shape
    if out_h <= 0 or out_w <= 0:
        raise DimensionError(f"output shape must be positive, got {out_shape}")
    if in_shape is not None and tuple(in_shape) != M.shape:
        raise DimensionError(f"flow frame {M.shape} does not match raw frame {tuple(in_shape)}")
    v2_h, v2_w = out_shape if v2_shape is None else v2_shape
    raw_h, raw_w = M.shape

    xs, ys = pixel_grid(out_shape)
    raw_x, raw_y = A1.inverse().apply(xs, ys)

    disp, raw_inb = bilinear_sample_grid(M.stacked(), raw_x, raw_y)
    flow_ok = sample_plane_validity(M.valid, raw_x, raw_y)

    tx, ty = A2.apply(raw_x + disp[0], raw_y + disp[1])
    valid = raw_inb & flow_ok & in_bounds(tx, ty, v2_h, v2_w)
    return DenseCorrespondence(np.asarray(tx, dtype=np.float64), np.asarray(ty, dtype=np.float64), valid)


def affine_correspondence(A, out_shape, v2_shape=None):
    """
    纯仿射对应关系 T(x) = A(x)

    Args:
        A (AffineMap): v1坐标 → v2坐标
        out_shape (tuple): v1网格尺寸
        v2_shape (tuple): v2网格尺寸，默认与out_shape相同

    Returns:
        DenseCorrespondence: 对应关系
    """
    v2_h, v2_w = out_shape if v2_shape is None else v2_shape
    xs, ys = pixel_grid(out_shape)
    tx, ty = A.apply(xs, ys)
    return DenseCorrespondence(tx, ty, in_bounds(tx, ty, v2_h, v2_w))
