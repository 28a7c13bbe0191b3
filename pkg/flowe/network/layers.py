"""
卷积层及其反向传播，张量布局为 N×C×H×W（也接受 C×H×W）
"""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import as_strided

from flowe.core.errors import DimensionError, TraceError


ACTIVATIONS = ("relu", "none")
STANDARDIZE_EPS = 1e-5
BATCH_NORM_EPS = 1e-5


@dataclass(frozen=True)
class ConvLayerSpec:
    """卷积层描述"""

    in_ch: int
    out_ch: int
    kernel: int = 3
    stride: int = 1
    dilation: int = 1
    padding: int = -1  # -1 表示按 dilation·(kernel-1)/2 自动计算
    has_bias: bool = True
    activation: str = "relu"
    standardize: bool = False  # 逐位置通道标准化
    batch_norm: bool = False  # 按通道在批次和空间上标准化

    def __post_init__(self):
        """计算填充并检查不变量"""
        if self.kernel not in (1, 3):
            raise DimensionError(f"kernel must be 1 or 3, got {self.kernel}")
        if self.stride not in (1, 2):
            raise DimensionError(f"stride must be 1 or 2, got {self.stride}")
        if self.dilation < 1 or self.in_ch < 1 or self.out_ch < 1:
            raise DimensionError(f"invalid layer spec {self}")
        if self.activation not in ACTIVATIONS:
            raise DimensionError(f"unknown activation '{self.activation}'")
        expected = self.dilation * (self.kernel - 1) // 2
        if self.padding == -1:
            object.__setattr__(self, "padding", expected)
        elif self.padding != expected:
            raise DimensionError(f"padding {self.padding} breaks size preservation, expected {expected}")

    @property
    def weight_shape(self):
        """权重形状 Cout×Cin×k×k"""
        return (self.out_ch, self.in_ch, self.kernel, self.kernel)

    @property
    def fan_in(self):
        """扇入"""
        return self.in_ch * self.kernel * self.kernel

    def output_size(self, size):
        """空间尺寸 ⌈size/stride⌉"""
        return (size + self.stride - 1) // self.stride


@dataclass
class ConvTrace:
    """卷积前向缓存"""

    spec: ConvLayerSpec
    w: np.ndarray
    patches: np.ndarray  # N×Cin×k×k×Ho×Wo
    input_shape: tuple  # 填充前的 N×Cin×H×W
    squeezed: bool  # 输入是否为 C×H×W


def _as_batch(x):
    """C×H×W → 1×C×H×W"""
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise DimensionError(f"expected C×H×W or N×C×H×W, got shape {x.shape}")


def _patches(x_pad, spec, out_h, out_w):
    """以步长视图取出卷积窗口，不复制数据"""
    n, c = x_pad.shape[:2]
    sn, sc, sh, sw = x_pad.strides
    d, s, k = spec.dilation, spec.stride, spec.kernel
    return as_strided(
        x_pad,
        shape=(n, c, k, k, out_h, out_w),
        strides=(sn, sc, d * sh, d * sw, s * sh, s * sw),
        writeable=False
    )


def conv2d_forward(x, spec, w, b):
    """
    卷积前向（互相关，零填充），返回输出与反向缓存

    Args:
        x (numpy.ndarray): Cin×H×W 或 N×Cin×H×W
        spec (ConvLayerSpec): 层描述
        w (numpy.ndarray): Cout×Cin×k×k 权重
        b (numpy.ndarray): Cout 偏置，可为None

    Returns:
        tuple: (输出, ConvTrace)
    """
    xb, squeezed = _as_batch(x)
    if xb.shape[1] != spec.in_ch:
        raise DimensionError(f"input has {xb.shape[1]} channels, layer expects {spec.in_ch}")
    if w.shape != spec.weight_shape:
        raise DimensionError(f"weight shape {w.shape} does not match {spec.weight_shape}")

    n, _, height, width = xb.shape
    out_h, out_w = spec.output_size(height), spec.output_size(width)
    p = spec.padding
    x_pad = np.pad(xb, ((0, 0), (0, 0), (p, p), (p, p))) if p else np.ascontiguousarray(xb)
    patches = _patches(x_pad, spec, out_h, out_w)

    out = np.tensordot(patches, w, axes=([1, 2, 3], [1, 2, 3])).transpose(0, 3, 1, 2)
    if spec.has_bias and b is not None:
        out = out + b.reshape(1, -1, 1, 1)
    out = np.ascontiguousarray(out)

    trace = ConvTrace(spec, w, patches, xb.shape, squeezed)
    return (out[0] if squeezed else out), trace


def conv2d(x, spec, w, b):
    """卷积前向，只返回输出"""
    out, _ = conv2d_forward(x, spec, w, b)
    return out


def conv2d_backward(trace, upstream_grad):
    """
    卷积的精确伴随

    Args:
        trace (ConvTrace): 对应前向调用的缓存
        upstream_grad (numpy.ndarray): 输出处的梯度

    Returns:
        tuple: (grad_w, grad_b, grad_x)
    """
    if trace is None:
        raise TraceError("conv2d_backward needs the forward trace")
    grad = upstream_grad[None] if trace.squeezed and upstream_grad.ndim == 3 else upstream_grad
    n, _, k, _, out_h, out_w = trace.patches.shape
    spec = trace.spec
    if grad.shape != (n, spec.out_ch, out_h, out_w):
        raise TraceError(f"upstream gradient {upstream_grad.shape} does not match layer output {(n, spec.out_ch, out_h, out_w)}")

    grad_w = np.tensordot(grad, trace.patches, axes=([0, 2, 3], [0, 4, 5]))
    grad_b = grad.sum(axis=(0, 2, 3)) if spec.has_bias else None

    # N×Ho×Wo×Cin×k×k
    grad_patches = np.tensordot(grad, trace.w, axes=([1], [0]))
    _, cin, height, width = trace.input_shape
    p, d, s = spec.padding, spec.dilation, spec.stride
    grad_pad = np.zeros((n, cin, height + 2 * p, width + 2 * p), dtype=grad.dtype)
    for i in range(k):
        for j in range(k):
            grad_pad[:, :, i * d:i * d + s * (out_h - 1) + 1:s, j * d:j * d + s * (out_w - 1) + 1:s] += \
                grad_patches[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    grad_x = grad_pad[:, :, p:p + height, p:p + width]
    grad_x = np.ascontiguousarray(grad_x)
    return grad_w, grad_b, (grad_x[0] if trace.squeezed else grad_x)


def relu(x):
    """ReLU"""
    return np.maximum(x, 0)


def relu_backward(pre_activation, grad):
    """ReLU 反向，零点取零次梯度"""
    return grad * (pre_activation > 0)


def standardize_forward(x):
    """
    逐位置的通道标准化，沿通道轴（倒数第三维）去均值除标准差

    Returns:
        tuple: (输出, (输出, 标准差))
    """
    mean = x.mean(axis=-3, keepdims=True)
    centered = x - mean
    std = np.sqrt((centered * centered).mean(axis=-3, keepdims=True) + STANDARDIZE_EPS)
    y = centered / std
    return y, (y, std)


def standardize_backward(cache, grad):
    """通道标准化的反向"""
    y, std = cache
    mean_g = grad.mean(axis=-3, keepdims=True)
    mean_gy = (grad * y).mean(axis=-3, keepdims=True)
    return (grad - mean_g - y * mean_gy) / std


def batch_norm_forward(x):
    """
    按通道在批次与空间上标准化（无可学习的缩放和平移），使用当前批次的统计量

    Args:
        x (numpy.ndarray): N×C×H×W 或 C×H×W

    Returns:
        tuple: (输出, 反向缓存)
    """
    xb, squeezed = _as_batch(x)
    mean = xb.mean(axis=(0, 2, 3), keepdims=True)
    centered = xb - mean
    std = np.sqrt((centered * centered).mean(axis=(0, 2, 3), keepdims=True) + BATCH_NORM_EPS)
    y = centered / std
    return (y[0] if squeezed else y), (y, std, squeezed)


def batch_norm_backward(cache, grad):
    """批次标准化的反向，梯度在整个批次间耦合"""
    y, std, squeezed = cache
    g = grad[None] if squeezed and grad.ndim == 3 else grad
    mean_g = g.mean(axis=(0, 2, 3), keepdims=True)
    mean_gy = (g * y).mean(axis=(0, 2, 3), keepdims=True)
    out = (g - mean_g - y * mean_gy) / std
    return out[0] if squeezed else out
