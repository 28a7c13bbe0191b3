"""
图像读写，基于 pygame 的图像模块（PNG 与 PPM）
"""

import os

os.environ.setdefault('PYGAME_HIDE_SUPPORT_PROMPT', '1')

import numpy as np
import pygame

from flowe.core.errors import DataSourceError, DimensionError


def _load_surface_array(path):
    """读取图像为 H×W×3 uint8 数组"""
    try:
        surface = pygame.image.load(path)
    except (pygame.error, OSError, FileNotFoundError) as e:
        raise DataSourceError(f"cannot read image: {e}", path=path)
    # surfarray 的布局为 W×H×3
    return np.ascontiguousarray(pygame.surfarray.array3d(surface).transpose(1, 0, 2))


def _save_surface_array(path, rgb):
    """保存 H×W×3 uint8 数组为图像"""
    surface = pygame.surfarray.make_surface(np.ascontiguousarray(rgb.transpose(1, 0, 2)))
    try:
        pygame.image.save(surface, path)
    except (pygame.error, OSError) as e:
        raise DataSourceError(f"cannot write image: {e}", path=path)


def load_image(path, dtype=np.float64):
    """
    读取8位RGB图像为 3×H×W 张量，取值范围 [0, 1]

    Args:
        path (str): 图像路径（PNG 或 PPM）
        dtype: 数据类型

    Returns:
        numpy.ndarray: 3×H×W 图像
    """
    rgb = _load_surface_array(path)
    return (rgb.transpose(2, 0, 1).astype(np.float64) / 255.0).astype(dtype)


def save_image(path, img):
    """
    保存 3×H×W 图像为8位PNG

    Args:
        path (str): 输出路径
        img (numpy.ndarray): 取值范围 [0, 1] 的图像
    """
    if img.ndim != 3 or img.shape[0] != 3:
        raise DimensionError(f"image must be 3×H×W, got {img.shape}")
    rgb = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    _save_surface_array(path, rgb)


def save_label_map(path, labels):
    """
    保存 H×W 整数标签图为8位PNG，数值复制到三个通道

    Args:
        path (str): 输出路径
        labels (numpy.ndarray): 0-255 的整数标签
    """
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise DimensionError(f"label map must be H×W, got {labels.shape}")
    plane = np.clip(labels, 0, 255).astype(np.uint8)
    _save_surface_array(path, np.repeat(plane[..., None], 3, axis=2))


def load_label_map(path):
    """
    读取标签图，取第一个通道

    Args:
        path (str): 图像路径

    Returns:
        numpy.ndarray: H×W int64 标签
    """
    return _load_surface_array(path)[..., 0].astype(np.int64)


def save_mask(path, mask):
    """保存布尔掩码，真为255"""
    save_label_map(path, np.where(mask, 255, 0))


def load_mask(path):
    """读取布尔掩码"""
    return load_label_map(path) >= 128
