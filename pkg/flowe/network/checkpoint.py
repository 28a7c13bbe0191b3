"""
检查点二进制格式

布局（小端）:
    b"FLWE" | u32 版本 | 32字节结构哈希 | u64 步数 | u8 元素字节数 | u8 标志位 |
    u32 结构JSON长度 | 结构JSON | 在线网络权重块 | [目标网络权重块] | [优化器速度块]

权重块按结构顺序排列，每块是原始小端浮点数据，形状由结构JSON推出。
"""

import os
import struct
import hashlib
from dataclasses import dataclass

import numpy as np

from flowe.core.errors import (
    CheckpointError, CheckpointHashError, CheckpointVersionError, CheckpointTruncatedError
)
from flowe.network.model import ArchSpec, ModelParams


CHECKPOINT_MAGIC = b"FLWE"
CHECKPOINT_VERSION = 1
HEADER = struct.Struct("<4sI32sQBBI")

FLAG_TARGET = 1
FLAG_OPTIMIZER = 2

_DTYPES = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


@dataclass(eq=False)
class Checkpoint:
    """加载后的检查点内容"""

    params: ModelParams
    target: ModelParams = None
    optimizer_state: dict = None  # 参数名 → 速度数组
    step: int = 0


def _param_shape(params, name):
    return params.arrays[name].shape


def save_checkpoint(params, optimizer_state=None, step=0, target=None):
    """
    序列化检查点

    Args:
        params (ModelParams): 在线网络参数
        optimizer_state (dict): 参数名 → 速度数组，可为None
        step (int): 训练步数
        target (ModelParams): 目标网络参数，可为None

    Returns:
        bytes: 检查点数据
    """
    dtype = params.dtype
    if dtype.itemsize not in _DTYPES:
        raise CheckpointError(f"unsupported parameter dtype {dtype}")
    wire = _DTYPES[dtype.itemsize]

    arch_json = params.arch.to_json().encode("utf-8")
    digest = hashlib.sha256(arch_json).digest()
    flags = 0
    if target is not None:
        params.check_compatible(target)
        flags |= FLAG_TARGET
    if optimizer_state is not None:
        flags |= FLAG_OPTIMIZER

    chunks = [
        HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, digest, int(step), dtype.itemsize, flags, len(arch_json)),
        arch_json
    ]
    chunks.extend(params.arrays[name].astype(wire).tobytes() for name in params.names())
    if target is not None:
        chunks.extend(target.arrays[name].astype(wire).tobytes() for name in target.names())
    if optimizer_state is not None:
        for name in params.names():
            velocity = optimizer_state.get(name)
            if velocity is None:
                velocity = np.zeros_like(params.arrays[name])
            chunks.append(np.asarray(velocity).astype(wire).tobytes())
    return b"".join(chunks)


class _Reader:
    """带偏移跟踪的顺序读取器"""

    def __init__(self, data):
        self.data = data
        self.offset = 0

    def take(self, size, what):
        end = self.offset + size
        if end > len(self.data):
            raise CheckpointTruncatedError(f"checkpoint truncated while reading {what}", self.offset)
        chunk = self.data[self.offset:end]
        self.offset = end
        return chunk

    def arrays(self, template, wire, dtype):
        out = {}
        for name in template.names():
            shape = _param_shape(template, name)
            count = int(np.prod(shape))
            raw = self.take(count * wire.itemsize, name)
            out[name] = np.frombuffer(raw, dtype=wire).astype(dtype).reshape(shape)
        return out


def load_checkpoint(data, expected_arch=None):
    """
    解析检查点

    Args:
        data (bytes): 检查点数据
        expected_arch (ArchSpec): 期望的结构，给定时结构哈希必须一致

    Returns:
        Checkpoint: 检查点内容
    """
    reader = _Reader(bytes(data))
    if len(reader.data) < 4:
        raise CheckpointTruncatedError("checkpoint truncated while reading magic", 0)
    if reader.data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad checkpoint magic {reader.data[:4]!r} (offset 0)")
    magic, version, digest, step, itemsize, flags, json_len = HEADER.unpack(reader.take(HEADER.size, "header"))
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    if itemsize not in _DTYPES:
        raise CheckpointError(f"unsupported element size {itemsize} (offset {HEADER.size - 6})")

    arch_json = reader.take(json_len, "architecture")
    if hashlib.sha256(arch_json).digest() != digest:
        raise CheckpointHashError("architecture hash does not match the embedded architecture")
    try:
        arch = ArchSpec.from_json(arch_json.decode("utf-8"))
    except (ValueError, KeyError, TypeError) as e:
        raise CheckpointError(f"cannot decode embedded architecture: {e}")
    if expected_arch is not None and expected_arch.arch_hash != digest.hex():
        raise CheckpointHashError(
            f"checkpoint architecture {digest.hex()[:12]} does not match expected {expected_arch.arch_hash[:12]}"
        )

    wire = _DTYPES[itemsize]
    dtype = np.dtype(f"f{itemsize}")
    # 形状模板只用来枚举参数名和形状
    template = ModelParams(arch, {
        name: np.empty(shape, dtype=np.uint8)
        for name, shape in _arch_shapes(arch).items()
    })
    params = ModelParams(arch, reader.arrays(template, wire, dtype))

    target = None
    if flags & FLAG_TARGET:
        target = ModelParams(arch, reader.arrays(template.target_copy(), wire, dtype), has_predictor=False)
    optimizer_state = None
    if flags & FLAG_OPTIMIZER:
        optimizer_state = reader.arrays(template, wire, dtype)

    if reader.offset != len(reader.data):
        raise CheckpointError(f"{len(reader.data) - reader.offset} trailing bytes after checkpoint (offset {reader.offset})")
    return Checkpoint(params, target, optimizer_state, int(step))


def _arch_shapes(arch):
    """结构中每个参数的形状"""
    shapes = {}
    layout = ModelParams(arch, {})
    for name, spec, is_bias in layout.iter_specs():
        shapes[name] = (spec.out_ch,) if is_bias else spec.weight_shape
    return shapes


def save_checkpoint_file(path, params, optimizer_state=None, step=0, target=None):
    """写入检查点文件，先写临时文件再替换"""
    data = save_checkpoint(params, optimizer_state, step, target)
    tmp_path = path + ".tmp"
    with open(tmp_path, "wb") as f:
        f.write(data)
    os.replace(tmp_path, path)
    return path


def load_checkpoint_file(path, expected_arch=None):
    """读取检查点文件"""
    with open(path, "rb") as f:
        return load_checkpoint(f.read(), expected_arch)
