"""
双线性采样、特征变形、对齐角点的双线性上采样与通道归一化
"""

import numpy as np

from flowe.core.errors import DimensionError
from flowe.core.tensor import check_chw


# 边界判定容差，吸收旋转带来的舍入误差
BOUND_TOL = 1e-9


def in_bounds(x, y, height, width):
    """
    判断坐标是否落在像素中心构成的矩形 [0, W-1]×[0, H-1] 内

    Args:
        x: x坐标（标量或数组）
        y: y坐标（标量或数组）
        height (int): 高度
        width (int): 宽度

    Returns:
        布尔值或布尔数组
    """
    return ((x >= -BOUND_TOL) & (x <= width - 1 + BOUND_TOL) &
            (y >= -BOUND_TOL) & (y <= height - 1 + BOUND_TOL))


def _corners(coord, size):
    """计算插值的左（上）邻居索引、右（下）邻居索引和小数部分"""
    coord = np.clip(coord, 0.0, size - 1)
    i0 = np.clip(np.floor(coord), 0, max(size - 2, 0)).astype(np.int64)
    i1 = np.minimum(i0 + 1, size - 1)
    frac = coord - i0
    return i0, i1, frac


def bilinear_weights(xs, ys, height, width):
    """
    计算双线性插值的邻居索引与权重

    Args:
        xs (numpy.ndarray): x坐标
        ys (numpy.ndarray): y坐标
        height (int): 高度
        width (int): 宽度

    Returns:
        tuple: (x0, x1, y0, y1, fx, fy, inb)
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    inb = in_bounds(xs, ys, height, width)
    x0, x1, fx = _corners(xs, width)
    y0, y1, fy = _corners(ys, height)
    return x0, x1, y0, y1, fx, fy, inb


def bilinear_sample_grid(f, xs, ys):
    """
    在一组坐标处对特征图做双线性采样，越界位置填零

    Args:
        f (numpy.ndarray): C×H×W特征图
        xs (numpy.ndarray): 任意形状的x坐标
        ys (numpy.ndarray): 与xs同形状的y坐标

    Returns:
        tuple: (C×xs.shape 的采样结果, 是否在界内的布尔数组)
    """
    _, height, width = check_chw(f, "map")
    x0, x1, y0, y1, fx, fy, inb = bilinear_weights(xs, ys, height, width)
    fx = fx.astype(f.dtype)
    fy = fy.astype(f.dtype)

    top = f[:, y0, x0] * (1 - fx) + f[:, y0, x1] * fx
    bottom = f[:, y1, x0] * (1 - fx) + f[:, y1, x1] * fx
    out = top * (1 - fy) + bottom * fy
    out = np.where(inb, out, 0).astype(f.dtype)
    return out, inb


def bilinear_sample(f, x, y):
    """
    在单个点 (x, y) 处双线性采样

    Args:
        f (numpy.ndarray): C×H×W特征图
        x (float): x坐标
        y (float): y坐标

    Returns:
        tuple: (长度为C的数组, in_bounds)
    """
    out, inb = bilinear_sample_grid(f, np.array([float(x)]), np.array([float(y)]))
    return out[:, 0], bool(inb[0])


def sample_plane_validity(valid, xs, ys):
    """
    在一组坐标处检查布尔平面：所有权重为正的邻居都必须有效

    右（下）边界上 x = W−1 时左邻居取 W−2、小数部分为1，右邻居索引被 _corners
    截断在 W−1 以内；权重为零的邻居不参与判断，因此落在最后一列（行）像素中心的点
    只看该像素本身。

    Args:
        valid (numpy.ndarray): H×W布尔平面
        xs (numpy.ndarray): x坐标
        ys (numpy.ndarray): y坐标

    Returns:
        numpy.ndarray: 布尔数组
    """
    height, width = valid.shape
    x0, x1, y0, y1, fx, fy, inb = bilinear_weights(xs, ys, height, width)
    use_x0, use_x1 = fx < 1.0, fx > 0.0
    use_y0, use_y1 = fy < 1.0, fy > 0.0
    ok = valid[y0, x0] | ~(use_x0 & use_y0)
    ok &= valid[y0, x1] | ~(use_x1 & use_y0)
    ok &= valid[y1, x0] | ~(use_x0 & use_y1)
    ok &= valid[y1, x1] | ~(use_x1 & use_y1)
    return ok & inb


def warp_features(f, T):
    """
    用稠密对应关系反向变形特征图，结果与第一个视图的网格对齐

    Args:
        f (numpy.ndarray): C×H'×W'特征图（T的坐标处于其像素坐标系）
        T (DenseCorrespondence): H×W对应关系

    Returns:
        tuple: (C×H×W变形结果, H×W有效掩码)
    """
    check_chw(f, "features")
    out, inb = bilinear_sample_grid(f, T.tx, T.ty)
    mask = inb & T.valid
    out = np.where(mask, out, 0).astype(f.dtype)
    return out, mask


def interpolation_matrix(src_size, dst_size):
    """
    构造对齐角点的一维线性插值矩阵

    Args:
        src_size (int): 输入长度
        dst_size (int): 输出长度

    Returns:
        numpy.ndarray: dst_size×src_size 矩阵
    """
    if dst_size < src_size:
        raise DimensionError(f"cannot upsample {src_size} to smaller size {dst_size}")
    matrix = np.zeros((dst_size, src_size), dtype=np.float64)
    if src_size == 1:
        matrix[:, 0] = 1.0
        return matrix
    rows = np.arange(dst_size)
    if dst_size == 1:
        src = np.zeros(1)
    else:
        src = rows * (src_size - 1) / (dst_size - 1)
    i0 = np.clip(np.floor(src).astype(np.int64), 0, src_size - 2)
    frac = src - i0
    np.add.at(matrix, (rows, i0), 1.0 - frac)
    np.add.at(matrix, (rows, i0 + 1), frac)
    return matrix


def upsample_bilinear(f, height, width):
    """
    对齐角点的双线性上采样，支持 C×h×w 与 N×C×h×w

    Args:
        f (numpy.ndarray): 输入特征图
        height (int): 输出高度
        width (int): 输出宽度

    Returns:
        numpy.ndarray: 上采样结果
    """
    if f.ndim not in (3, 4):
        raise DimensionError(f"upsample expects rank 3 or 4, got shape {f.shape}")
    h, w = f.shape[-2:]
    uy = interpolation_matrix(h, height).astype(f.dtype)
    ux = interpolation_matrix(w, width).astype(f.dtype)
    return np.einsum('Hh,...hw,Ww->...HW', uy, f, ux)


def upsample_bilinear_adjoint(grad, height, width):
    """
    上采样的伴随算子，用于反向传播

    Args:
        grad (numpy.ndarray): 上采样输出处的梯度
        height (int): 原始输入高度
        width (int): 原始输入宽度

    Returns:
        numpy.ndarray: 输入处的梯度
    """
    if grad.ndim not in (3, 4):
        raise DimensionError(f"upsample adjoint expects rank 3 or 4, got shape {grad.shape}")
    big_h, big_w = grad.shape[-2:]
    uy = interpolation_matrix(height, big_h).astype(grad.dtype)
    ux = interpolation_matrix(width, big_w).astype(grad.dtype)
    return np.einsum('Hh,...HW,Ww->...hw', uy, grad, ux)


def channel_normalize(f, eps=1e-12):
    """
    沿通道维做单位归一化（通道轴为倒数第三维）

    Args:
        f (numpy.ndarray): C×H×W 或 N×C×H×W
        eps (float): 范数下限

    Returns:
        numpy.ndarray: 归一化结果
    """
    norm = np.sqrt(np.sum(f * f, axis=-3, keepdims=True))
    return f / np.maximum(norm, eps)


def channel_normalize_backward(f, grad, eps=1e-12):
    """
    通道归一化的反向传播

    Args:
        f (numpy.ndarray): 归一化前的输入
        grad (numpy.ndarray): 输出处的梯度
        eps (float): 范数下限

    Returns:
        numpy.ndarray: 输入处的梯度
    """
    norm = np.sqrt(np.sum(f * f, axis=-3, keepdims=True))
    safe = np.maximum(norm, eps)
    y = f / safe
    projected = grad - y * np.sum(y * grad, axis=-3, keepdims=True)
    return np.where(norm >= eps, projected / safe, grad / eps)
