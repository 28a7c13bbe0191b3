"""
带有效性掩码的逐像素平方距离损失
"""

import numpy as np

from flowe.core.errors import DimensionError
from flowe.geometry.sampling import channel_normalize, channel_normalize_backward


def flowe_loss(p1, p2, mask):
    """
    掩码内逐像素的单位向量平方距离的平均值

    两个输入都在内部做通道归一化（对已归一化的输入是恒等），
    因此 grad_p1 包含归一化的伴随。p2 视为常量。

    Args:
        p1 (numpy.ndarray): C×H×W 在线网络预测
        p2 (numpy.ndarray): C×H×W 变形后的目标投影
        mask (numpy.ndarray): H×W 布尔掩码

    Returns:
        tuple: (loss, grad_p1)，掩码为空时为 (0.0, 零梯度)
    """
    if p1.shape != p2.shape or p1.ndim != 3 or mask.shape != p1.shape[1:]:
        raise DimensionError(f"loss inputs disagree: p1{p1.shape}, p2{p2.shape}, mask{mask.shape}")
    mask = mask.astype(bool)
    count = int(mask.sum())
    if count == 0:
        return 0.0, np.zeros_like(p1)

    n1 = channel_normalize(p1)
    n2 = channel_normalize(p2)
    diff = (n1 - n2) * mask
    loss = float(np.sum(diff * diff)) / count
    grad_n1 = (2.0 / count) * diff
    return loss, channel_normalize_backward(p1, grad_n1)
