"""
光流场与稠密对应关系
"""

from dataclasses import dataclass

import numpy as np

from flowe.core.errors import DimensionError
from flowe.geometry.sampling import bilinear_sample_grid


@dataclass(frozen=True, eq=False)
class FlowField:
    """
    光流场，u、v为像素位移平面，valid为有效性平面

    Args:
        u (numpy.ndarray): H×W x方向位移
        v (numpy.ndarray): H×W y方向位移
        valid (numpy.ndarray): H×W布尔平面，None表示全部有效
    """

    u: np.ndarray
    v: np.ndarray
    valid: np.ndarray = None

    def __post_init__(self):
        """检查形状与有限性"""
        u = np.asarray(self.u, dtype=np.float64)
        v = np.asarray(self.v, dtype=np.float64)
        valid = np.ones(u.shape, dtype=bool) if self.valid is None else np.asarray(self.valid, dtype=bool)
        if u.ndim != 2 or u.shape != v.shape or u.shape != valid.shape:
            raise DimensionError(f"flow planes must share an H×W shape: u{u.shape} v{v.shape} valid{valid.shape}")
        if not (np.all(np.isfinite(u[valid])) and np.all(np.isfinite(v[valid]))):
            raise DimensionError("flow has non-finite displacement on valid pixels")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "valid", valid)

    @property
    def shape(self):
        """(H, W)"""
        return self.u.shape

    def stacked(self):
        """2×H×W 位移张量"""
        return np.stack([self.u, self.v])

    def with_valid(self, valid):
        """返回替换有效性平面后的新光流场"""
        return FlowField(self.u, self.v, valid)

    @staticmethod
    def zeros(shape):
        """零光流"""
        return FlowField(np.zeros(shape), np.zeros(shape))

    @staticmethod
    def constant(shape, du, dv):
        """常数光流"""
        return FlowField(np.full(shape, float(du)), np.full(shape, float(dv)))


@dataclass(frozen=True, eq=False)
class DenseCorrespondence:
    """
    稠密对应关系：第一个视图每个像素在第二个视图中的目标坐标

    Args:
        tx (numpy.ndarray): H×W 目标x坐标
        ty (numpy.ndarray): H×W 目标y坐标
        valid (numpy.ndarray): H×W 布尔平面
    """

    tx: np.ndarray
    ty: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        if self.tx.shape != self.ty.shape or self.tx.shape != self.valid.shape or self.tx.ndim != 2:
            raise DimensionError(f"correspondence planes must share an H×W shape: {self.tx.shape}")

    @property
    def shape(self):
        """(H, W)"""
        return self.tx.shape

    @staticmethod
    def identity(shape):
        """恒等对应"""
        xs, ys = pixel_grid(shape)
        return DenseCorrespondence(xs, ys, np.ones(shape, dtype=bool))


def pixel_grid(shape):
    """
    像素中心网格

    Args:
        shape (tuple): (H, W)

    Returns:
        tuple: (xs, ys) 两个 H×W 数组
    """
    ys, xs = np.mgrid[0:shape[0], 0:shape[1]].astype(np.float64)
    return xs, ys


def fb_consistency(fwd, bwd, alpha=0.01, beta=0.5):
    """
    前向-后向光流一致性检查

    |f(x) + b(x+f(x))|² ≤ alpha·(|f(x)|² + |b(x+f(x))|²) + beta 时为真，
    x+f(x) 越界时为假

    Args:
        fwd (FlowField): 前向光流
        bwd (FlowField): 后向光流
        alpha (float): 相对阈值
        beta (float): 绝对阈值

    Returns:
        numpy.ndarray: H×W 布尔掩码
    """
    if fwd.shape != bwd.shape:
        raise DimensionError(f"forward flow {fwd.shape} and backward flow {bwd.shape} differ")
    xs, ys = pixel_grid(fwd.shape)
    dest_x = xs + fwd.u
    dest_y = ys + fwd.v
    back, inb = bilinear_sample_grid(bwd.stacked(), dest_x, dest_y)
    bu, bv = back[0], back[1]

    diff = (fwd.u + bu) ** 2 + (fwd.v + bv) ** 2
    magnitude = fwd.u ** 2 + fwd.v ** 2 + bu ** 2 + bv ** 2
    consistent = diff <= alpha * magnitude + beta
    return consistent & inb


def flow_stats(flow):
    """
    光流统计信息

    Args:
        flow (FlowField): 光流场

    Returns:
        dict: 尺寸与位移统计
    """
    height, width = flow.shape
    valid = flow.valid
    u, v = flow.u[valid], flow.v[valid]
    magnitude = np.sqrt(u ** 2 + v ** 2)

    def _summary(values):
        if values.size == 0:
            return {"min": 0.0, "max": 0.0, "mean": 0.0}
        return {"min": float(values.min()), "max": float(values.max()), "mean": float(values.mean())}

    return {
        "width": int(width),
        "height": int(height),
        "valid_fraction": float(valid.mean()),
        "u": _summary(u),
        "v": _summary(v),
        "magnitude": _summary(magnitude)
    }


def flow_endpoint_error(a, b):
    """
    两个光流之间的端点误差

    Args:
        a (FlowField): 光流A
        b (FlowField): 光流B

    Returns:
        dict: 平均与最大端点误差以及不同像素数
    """
    if a.shape != b.shape:
        raise DimensionError(f"flow shapes differ: {a.shape} vs {b.shape}")
    mask = a.valid & b.valid
    epe = np.sqrt((a.u - b.u) ** 2 + (a.v - b.v) ** 2)[mask]
    return {
        "pixels": int(mask.sum()),
        "epe_mean": float(epe.mean()) if epe.size else 0.0,
        "epe_max": float(epe.max()) if epe.size else 0.0,
        "differing": int(np.count_nonzero(epe))
    }
