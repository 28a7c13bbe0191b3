"""
全卷积网络：编码器 f（输出步长8）、1×1 投影头 g 与 1×1 预测头 q
"""

import json
import hashlib
from dataclasses import dataclass, field

import numpy as np

from flowe.core.config import config_to_dict
from flowe.core.errors import ArchMismatchError, DimensionError, TraceError
from flowe.network.layers import (
    ConvLayerSpec, conv2d_forward, conv2d_backward, relu, relu_backward,
    standardize_forward, standardize_backward, batch_norm_forward, batch_norm_backward
)


SECTIONS = ("encoder", "projector", "predictor")
OUTPUT_STRIDE = 8


@dataclass(frozen=True)
class ArchSpec:
    """网络结构描述"""

    encoder: tuple
    projector: tuple
    predictor: tuple

    def section(self, name):
        """取某一部分的层描述"""
        return getattr(self, name)

    def to_json(self):
        """规范化JSON，用于哈希与检查点"""
        return json.dumps(config_to_dict(self), sort_keys=True, separators=(",", ":"))

    @property
    def arch_hash(self):
        """结构哈希（SHA-256 十六进制）"""
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()

    @staticmethod
    def from_json(text):
        """从规范化JSON恢复结构"""
        data = json.loads(text)
        return ArchSpec(*(tuple(ConvLayerSpec(**layer) for layer in data[name]) for name in SECTIONS))


def default_arch(channel_standardize=False, batch_norm=True):
    """
    默认桌面规模结构

    编码器: 3→16 s2, 16→32 s2, 32→64 s2, 64→64 空洞2；投影头: 64→64→32；预测头: 32→32→32。
    投影头和预测头的隐藏层用批次统计量做通道标准化，此时不带偏置

    Args:
        channel_standardize (bool): 是否在带ReLU的层中加入逐位置通道标准化
        batch_norm (bool): 投影头和预测头隐藏层是否做批次标准化

    Returns:
        ArchSpec: 结构描述
    """
    std = channel_standardize
    bn = batch_norm
    encoder = (
        ConvLayerSpec(3, 16, kernel=3, stride=2, standardize=std),
        ConvLayerSpec(16, 32, kernel=3, stride=2, standardize=std),
        ConvLayerSpec(32, 64, kernel=3, stride=2, standardize=std),
        ConvLayerSpec(64, 64, kernel=3, stride=1, dilation=2, standardize=std),
    )
    projector = (
        ConvLayerSpec(64, 64, kernel=1, standardize=std, batch_norm=bn, has_bias=not bn),
        ConvLayerSpec(64, 32, kernel=1, activation="none"),
    )
    predictor = (
        ConvLayerSpec(32, 32, kernel=1, standardize=std, batch_norm=bn, has_bias=not bn),
        ConvLayerSpec(32, 32, kernel=1, activation="none"),
    )
    return ArchSpec(encoder, projector, predictor)


def param_name(section, index, kind):
    """参数名，例如 encoder.0.weight"""
    return f"{section}.{index}.{kind}"


@dataclass(frozen=True, eq=False)
class ModelParams:
    """
    网络参数。目标网络使用同一结构但不含预测头

    Args:
        arch (ArchSpec): 结构描述
        arrays (dict): 参数名 → 数组，按结构顺序排列
        has_predictor (bool): 是否包含预测头
    """

    arch: ArchSpec
    arrays: dict
    has_predictor: bool = True

    @property
    def arch_hash(self):
        """结构哈希"""
        return self.arch.arch_hash

    @property
    def dtype(self):
        """参数数据类型"""
        return next(iter(self.arrays.values())).dtype

    def sections(self):
        """包含的部分"""
        return SECTIONS if self.has_predictor else SECTIONS[:2]

    def names(self):
        """按结构顺序列出参数名"""
        return [name for name, _, _ in self.iter_specs()]

    def iter_specs(self):
        """
        按结构顺序遍历 (参数名, 层描述, 是否为偏置)

        Yields:
            tuple: (name, spec, is_bias)
        """
        for section in self.sections():
            for index, spec in enumerate(self.arch.section(section)):
                yield param_name(section, index, "weight"), spec, False
                if spec.has_bias:
                    yield param_name(section, index, "bias"), spec, True

    def layer(self, section, index):
        """取某层的 (spec, w, b)"""
        spec = self.arch.section(section)[index]
        w = self.arrays[param_name(section, index, "weight")]
        b = self.arrays.get(param_name(section, index, "bias"))
        return spec, w, b

    def replace_arrays(self, arrays):
        """返回使用新数组的参数"""
        return ModelParams(self.arch, dict(arrays), self.has_predictor)

    def astype(self, dtype):
        """转换数据类型"""
        return self.replace_arrays({k: v.astype(dtype) for k, v in self.arrays.items()})

    def copy(self):
        """深拷贝"""
        return self.replace_arrays({k: v.copy() for k, v in self.arrays.items()})

    def target_copy(self):
        """不含预测头的目标网络副本"""
        arrays = {k: v.copy() for k, v in self.arrays.items() if not k.startswith("predictor.")}
        return ModelParams(self.arch, arrays, has_predictor=False)

    def check_compatible(self, other):
        """检查两个参数集合的结构一致"""
        if self.arch_hash != other.arch_hash:
            raise ArchMismatchError(f"architecture mismatch: {self.arch_hash[:12]} vs {other.arch_hash[:12]}")

    def parameter_count(self, section=None):
        """参数数量"""
        return int(sum(v.size for k, v in self.arrays.items() if section is None or k.startswith(section + ".")))

    def digest(self, section=None):
        """参数内容的SHA-256摘要，用于检查冻结"""
        sha = hashlib.sha256()
        for name in self.names():
            if section is None or name.startswith(section + "."):
                sha.update(name.encode("utf-8"))
                sha.update(np.ascontiguousarray(self.arrays[name]).tobytes())
        return sha.hexdigest()


def init_params(rng, arch=None, dtype=np.float64):
    """
    He初始化：权重服从 N(0, 2/fan_in)，偏置为零

    Args:
        rng (numpy.random.Generator): 随机数生成器
        arch (ArchSpec): 结构描述，默认为 default_arch()
        dtype: 参数数据类型

    Returns:
        ModelParams: 在线网络参数
    """
    arch = default_arch() if arch is None else arch
    arrays = {}
    for section in SECTIONS:
        for index, spec in enumerate(arch.section(section)):
            std = np.sqrt(2.0 / spec.fan_in)
            arrays[param_name(section, index, "weight")] = (rng.standard_normal(spec.weight_shape) * std).astype(dtype)
            if spec.has_bias:
                arrays[param_name(section, index, "bias")] = np.zeros(spec.out_ch, dtype=dtype)
    return ModelParams(arch, arrays)


@dataclass
class LayerTrace:
    """单层前向缓存"""

    conv: object  # ConvTrace
    pre_activation: np.ndarray = None
    standardize: tuple = None
    batch_norm: tuple = None


@dataclass
class ForwardTrace:
    """前向轨迹，保存反向传播所需的每层缓存"""

    layers: dict = field(default_factory=dict)  # section → [LayerTrace]
    pooled: bool = False
    pooled_from: tuple = None  # 池化前编码器输出的空间尺寸
    squeezed: bool = False
    h: np.ndarray = None
    z: np.ndarray = None
    p: np.ndarray = None

    def layer_count(self):
        """轨迹中的层数"""
        return sum(len(v) for v in self.layers.values())

    def relu_patterns(self):
        """所有ReLU层的激活模式，用于数值梯度检查时排除折点"""
        return [lt.pre_activation > 0 for section in SECTIONS for lt in self.layers.get(section, [])
                if lt.pre_activation is not None]


def _run_section(params, section, x, keep_trace):
    """顺序执行一部分的所有层"""
    traces = []
    for index in range(len(params.arch.section(section))):
        spec, w, b = params.layer(section, index)
        out, conv_trace = conv2d_forward(x, spec, w, b)
        layer_trace = LayerTrace(conv_trace)
        if spec.standardize:
            out, layer_trace.standardize = standardize_forward(out)
        if spec.batch_norm:
            out, layer_trace.batch_norm = batch_norm_forward(out)
        if spec.activation == "relu":
            layer_trace.pre_activation = out
            out = relu(out)
        if keep_trace:
            traces.append(layer_trace)
        x = out
    return x, traces


def _backward_section(params, section, traces, grad, grads):
    """反向执行一部分的所有层，累积参数梯度"""
    for index in reversed(range(len(traces))):
        layer_trace = traces[index]
        spec = layer_trace.conv.spec
        if layer_trace.pre_activation is not None:
            grad = relu_backward(layer_trace.pre_activation, grad)
        if layer_trace.batch_norm is not None:
            grad = batch_norm_backward(layer_trace.batch_norm, grad)
        if layer_trace.standardize is not None:
            grad = standardize_backward(layer_trace.standardize, grad)
        grad_w, grad_b, grad = conv2d_backward(layer_trace.conv, grad)
        grads[param_name(section, index, "weight")] = grad_w
        if spec.has_bias:
            grads[param_name(section, index, "bias")] = grad_b
    return grad


def forward(params, v, keep_trace=False, pooled=False):
    """
    网络前向：h = f(v)，z = g(h)，p = q(z)

    Args:
        params (ModelParams): 参数
        v (numpy.ndarray): 3×H×W 或 N×3×H×W 输入，H、W 可被8整除
        keep_trace (bool): 是否保留反向缓存
        pooled (bool): 编码器之后做全局平均池化（非像素级变体）

    Returns:
        tuple: (h, z, p, trace)，目标网络的 p 为 None，未保留轨迹时 trace 为 None
    """
    squeezed = v.ndim == 3
    vb = v[None] if squeezed else v
    if vb.ndim != 4:
        raise DimensionError(f"network input must be 3×H×W or N×3×H×W, got {v.shape}")
    height, width = vb.shape[-2:]
    if height % OUTPUT_STRIDE or width % OUTPUT_STRIDE:
        raise DimensionError(f"input size {height}x{width} is not divisible by {OUTPUT_STRIDE}")

    trace = ForwardTrace(pooled=pooled, squeezed=squeezed) if keep_trace else None

    h, traces = _run_section(params, "encoder", vb, keep_trace)
    if keep_trace:
        trace.layers["encoder"] = traces
    if pooled:
        if keep_trace:
            trace.pooled_from = h.shape[-2:]
        h = h.mean(axis=(2, 3), keepdims=True)

    z, traces = _run_section(params, "projector", h, keep_trace)
    if keep_trace:
        trace.layers["projector"] = traces

    p = None
    if params.has_predictor:
        p, traces = _run_section(params, "predictor", z, keep_trace)
        if keep_trace:
            trace.layers["predictor"] = traces

    if squeezed:
        h, z = h[0], z[0]
        p = None if p is None else p[0]
    if keep_trace:
        trace.h, trace.z, trace.p = h, z, p
    return h, z, p, trace


def backward(params, trace, grad_p, grad_z=None, grad_h=None):
    """
    在线网络的反向传播

    Args:
        params (ModelParams): 前向使用的参数
        trace (ForwardTrace): 前向轨迹
        grad_p (numpy.ndarray): p 处的梯度，可为None
        grad_z (numpy.ndarray): z 处的额外梯度，可为None
        grad_h (numpy.ndarray): h 处的额外梯度，可为None

    Returns:
        dict: 参数名 → 梯度，顺序与参数一致
    """
    if trace is None:
        raise TraceError("backward needs a trace from forward(..., keep_trace=True)")
    if trace.layer_count() != sum(len(params.arch.section(s)) for s in params.sections()):
        raise TraceError("trace layer count does not match the parameters")

    def _batch(grad, ref, name):
        if grad is None:
            return None
        if grad.shape != ref.shape:
            raise TraceError(f"gradient for {name} has shape {grad.shape}, expected {ref.shape}")
        return grad[None] if trace.squeezed else grad

    grads = {}
    grad = _batch(grad_p, trace.p, "p") if trace.p is not None else None
    if params.has_predictor:
        if grad is None:
            grad = np.zeros_like(trace.p[None] if trace.squeezed else trace.p)
        grad = _backward_section(params, "predictor", trace.layers["predictor"], grad, grads)

    extra = _batch(grad_z, trace.z, "z")
    if extra is not None:
        grad = extra if grad is None else grad + extra
    if grad is None:
        grad = np.zeros_like(trace.z[None] if trace.squeezed else trace.z)
    grad = _backward_section(params, "projector", trace.layers["projector"], grad, grads)

    extra = _batch(grad_h, trace.h, "h")
    if extra is not None:
        grad = grad + extra
    if trace.pooled:
        pool_h, pool_w = trace.pooled_from
        grad = np.broadcast_to(grad / (pool_h * pool_w), grad.shape[:2] + (pool_h, pool_w))
    _backward_section(params, "encoder", trace.layers["encoder"], np.ascontiguousarray(grad), grads)

    return {name: grads[name] for name in params.names()}


def encode(params, v):
    """
    只运行编码器 h = f(v)

    Args:
        params (ModelParams): 参数
        v (numpy.ndarray): 3×H×W 或 N×3×H×W 输入

    Returns:
        numpy.ndarray: 步长8的特征图
    """
    height, width = v.shape[-2:]
    if v.ndim not in (3, 4):
        raise DimensionError(f"network input must be 3×H×W or N×3×H×W, got {v.shape}")
    if height % OUTPUT_STRIDE or width % OUTPUT_STRIDE:
        raise DimensionError(f"input size {height}x{width} is not divisible by {OUTPUT_STRIDE}")
    h, _ = _run_section(params, "encoder", v, keep_trace=False)
    return h
