"""
Middlebury .flo 光流文件读写

格式（小端）：float32 魔数 202021.25，int32 宽度，int32 高度，
随后按行主序交错存放 float32 (u, v)
"""

import struct

import numpy as np

from flowe.core.errors import FlowFormatError
from flowe.geometry.flow import FlowField


FLO_MAGIC = 202021.25
HEADER = struct.Struct('<fii')


def flo_write(flow):
    """
    编码光流为 .flo 字节串

    Args:
        flow (FlowField): 光流场

    Returns:
        bytes: 文件内容
    """
    height, width = flow.shape
    payload = np.empty((height, width, 2), dtype='<f4')
    payload[..., 0] = flow.u
    payload[..., 1] = flow.v
    return HEADER.pack(FLO_MAGIC, width, height) + payload.tobytes()


def flo_read(data):
    """
    解码 .flo 字节串，读出的有效性平面全部为真

    Args:
        data (bytes): 文件内容

    Returns:
        FlowField: 光流场
    """
    if len(data) < 4:
        raise FlowFormatError(f"truncated header: {len(data)} of {HEADER.size} bytes", offset=len(data))
    magic, = struct.unpack_from('<f', data, 0)
    if magic != np.float32(FLO_MAGIC):
        raise FlowFormatError(f"bad magic {magic!r}, expected {FLO_MAGIC}", offset=0)
    if len(data) < HEADER.size:
        raise FlowFormatError(f"truncated header: {len(data)} of {HEADER.size} bytes", offset=len(data))

    _, width, height = HEADER.unpack_from(data, 0)
    if width <= 0:
        raise FlowFormatError(f"non-positive width {width}", offset=4)
    if height <= 0:
        raise FlowFormatError(f"non-positive height {height}", offset=8)

    expected = width * height * 2 * 4
    available = len(data) - HEADER.size
    if available < expected:
        raise FlowFormatError(f"truncated payload: {available} of {expected} bytes", offset=len(data))
    if available > expected:
        raise FlowFormatError(f"{available - expected} trailing bytes after payload", offset=HEADER.size + expected)

    payload = np.frombuffer(data, dtype='<f4', count=width * height * 2, offset=HEADER.size)
    payload = payload.reshape(height, width, 2)
    return FlowField(payload[..., 0].astype(np.float64), payload[..., 1].astype(np.float64))


def flo_read_file(path):
    """从文件读取光流"""
    with open(path, "rb") as f:
        return flo_read(f.read())


def flo_write_file(path, flow):
    """写入光流到文件"""
    with open(path, "wb") as f:
        f.write(flo_write(flow))
