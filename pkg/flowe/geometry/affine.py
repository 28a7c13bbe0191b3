"""
仿射变换，作用于像素坐标（x向右，y向下，像素中心位于整数坐标）
"""

import math
from dataclasses import dataclass

import numpy as np

from flowe.core.errors import DegeneracyError


DET_EPS = 1e-12


@dataclass(frozen=True)
class AffineMap:
    """
    2×3仿射矩阵 [[a, b, tx], [c, d, ty]]，构造时即检查可逆性

    Args:
        m: 6个实数，按行 a, b, tx, c, d, ty 排列，也可以是2×3数组
    """

    m: tuple

    def __post_init__(self):
        """规范化系数并检查可逆性"""
        values = tuple(float(v) for v in np.asarray(self.m, dtype=np.float64).reshape(-1))
        if len(values) != 6:
            raise DegeneracyError(f"affine map needs 6 coefficients, got {len(values)}")
        if not all(math.isfinite(v) for v in values):
            raise DegeneracyError(f"affine map has non-finite coefficients {values}")
        a, b, _, c, d, _ = values
        if abs(a * d - b * c) < DET_EPS:
            raise DegeneracyError(f"singular affine map, det={a * d - b * c!r}")
        object.__setattr__(self, "m", values)

    @property
    def det(self):
        """行列式"""
        a, b, _, c, d, _ = self.m
        return a * d - b * c

    @property
    def matrix(self):
        """2×3 numpy 矩阵"""
        return np.array(self.m, dtype=np.float64).reshape(2, 3)

    def matrix3(self):
        """3×3齐次矩阵"""
        out = np.eye(3)
        out[:2] = self.matrix
        return out

    def apply(self, x, y):
        """
        变换坐标，支持标量与数组

        Args:
            x: x坐标
            y: y坐标

        Returns:
            tuple: 变换后的 (x, y)
        """
        a, b, tx, c, d, ty = self.m
        return a * x + b * y + tx, c * x + d * y + ty

    def inverse(self):
        """
        求逆变换

        Returns:
            AffineMap: 逆变换
        """
        a, b, tx, c, d, ty = self.m
        det = a * d - b * c
        ia, ib = d / det, -b / det
        ic, id_ = -c / det, a / det
        return AffineMap((ia, ib, -(ia * tx + ib * ty), ic, id_, -(ic * tx + id_ * ty)))

    def compose(self, other):
        """
        复合变换，先应用 other 再应用 self

        Args:
            other (AffineMap): 先作用的变换

        Returns:
            AffineMap: self ∘ other
        """
        a, b, tx, c, d, ty = self.m
        e, f, ux, g, h, uy = other.m
        return AffineMap((
            a * e + b * g, a * f + b * h, a * ux + b * uy + tx,
            c * e + d * g, c * f + d * h, c * ux + d * uy + ty
        ))

    def is_identity(self, tol=0.0):
        """是否为恒等变换"""
        return all(abs(u - v) <= tol for u, v in zip(self.m, IDENTITY))

    def __repr__(self):
        """字符串表示"""
        return "AffineMap([[{:.6g}, {:.6g}, {:.6g}], [{:.6g}, {:.6g}, {:.6g}]])".format(*self.m)


IDENTITY = (1.0, 0.0, 0.0, 0.0, 1.0, 0.0)


def affine_identity():
    """恒等变换"""
    return AffineMap(IDENTITY)


def affine_from_params(scale=1.0, angle_deg=0.0, tx=0.0, ty=0.0):
    """
    由缩放、旋转和平移构造仿射变换：先缩放再旋转，最后平移

    Args:
        scale (float): 各向同性缩放因子
        angle_deg (float): 旋转角度（度）
        tx (float): x平移
        ty (float): y平移

    Returns:
        AffineMap: 仿射变换
    """
    theta = math.radians(angle_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    return AffineMap((scale * cos_t, -scale * sin_t, tx, scale * sin_t, scale * cos_t, ty))
