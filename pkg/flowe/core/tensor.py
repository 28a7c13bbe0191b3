"""
张量辅助函数，FlowE中的张量就是秩不超过4的numpy数组
"""

import numpy as np

from flowe.core.errors import DimensionError


PRECISION_DTYPES = {
    32: np.float32,
    64: np.float64
}


def resolve_dtype(precision):
    """
    将精度位数转换为numpy数据类型

    Args:
        precision (int): 32 或 64

    Returns:
        numpy.dtype: 对应的浮点类型
    """
    if precision not in PRECISION_DTYPES:
        raise DimensionError(f"unsupported precision {precision}, expected 32 or 64")
    return np.dtype(PRECISION_DTYPES[precision])


def check_chw(tensor, name="tensor"):
    """
    检查C×H×W形状

    Args:
        tensor (numpy.ndarray): 张量
        name (str): 用于错误信息的名称

    Returns:
        tuple: (C, H, W)
    """
    if tensor.ndim != 3 or min(tensor.shape) <= 0:
        raise DimensionError(f"{name} must be a non-empty C×H×W tensor, got shape {tensor.shape}")
    return tensor.shape
