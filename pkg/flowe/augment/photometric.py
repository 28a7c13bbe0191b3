"""
光度增强：颜色抖动、灰度化与高斯模糊，只改变像素值不改变几何
"""

import math

import numpy as np
from scipy.ndimage import correlate1d


LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])

# RGB ↔ YIQ，色调旋转在 IQ 平面内进行
RGB_TO_YIQ = np.array([
    [0.299, 0.587, 0.114],
    [0.596, -0.274, -0.322],
    [0.211, -0.523, 0.312]
])
YIQ_TO_RGB = np.linalg.inv(RGB_TO_YIQ)


def rgb_to_grayscale(img):
    """
    ITU-R 601 亮度，复制到三个通道

    Args:
        img (numpy.ndarray): 3×H×W 图像

    Returns:
        numpy.ndarray: 3×H×W 灰度图像
    """
    luma = np.tensordot(LUMA_WEIGHTS.astype(img.dtype), img, axes=(0, 0))
    return np.repeat(luma[None], 3, axis=0)


def adjust_brightness(img, factor):
    """亮度缩放"""
    return np.clip(img * factor, 0.0, 1.0)


def adjust_contrast(img, factor):
    """对比度：与平均亮度混合"""
    mean = float(np.tensordot(LUMA_WEIGHTS, img, axes=(0, 0)).mean())
    return np.clip(mean + (img - mean) * factor, 0.0, 1.0)


def adjust_saturation(img, factor):
    """饱和度：与灰度图混合"""
    gray = rgb_to_grayscale(img)
    return np.clip(gray + (img - gray) * factor, 0.0, 1.0)


def adjust_hue(img, shift):
    """
    色调偏移

    Args:
        img (numpy.ndarray): 3×H×W 图像
        shift (float): 偏移量，单位为整圈，取值 [-0.5, 0.5]
    """
    angle = 2.0 * math.pi * shift
    cos_a, sin_a = math.cos(angle), math.sin(angle)
    rotation = np.array([
        [1.0, 0.0, 0.0],
        [0.0, cos_a, -sin_a],
        [0.0, sin_a, cos_a]
    ])
    transform = (YIQ_TO_RGB @ rotation @ RGB_TO_YIQ).astype(img.dtype)
    return np.clip(np.tensordot(transform, img, axes=(1, 0)), 0.0, 1.0)


def color_distort(img, rng, cfg):
    """
    随机颜色扭曲：以 color_prob 概率按随机顺序做亮度、对比度、饱和度、色调抖动，
    再以 grayscale_prob 概率灰度化，输出截断到 [0, 1]

    Args:
        img (numpy.ndarray): 3×H×W 图像，取值 [0, 1]
        rng (numpy.random.Generator): 随机数生成器
        cfg (AugmentConfig): 增强配置

    Returns:
        numpy.ndarray: 增强后的图像
    """
    out = img
    brightness, contrast, saturation, hue = cfg.color_strength

    if rng.random() < cfg.color_prob:
        for op in rng.permutation(4):
            if op == 0 and brightness > 0:
                out = adjust_brightness(out, rng.uniform(max(0.0, 1 - brightness), 1 + brightness))
            elif op == 1 and contrast > 0:
                out = adjust_contrast(out, rng.uniform(max(0.0, 1 - contrast), 1 + contrast))
            elif op == 2 and saturation > 0:
                out = adjust_saturation(out, rng.uniform(max(0.0, 1 - saturation), 1 + saturation))
            elif op == 3 and hue > 0:
                out = adjust_hue(out, rng.uniform(-hue, hue))

    if rng.random() < cfg.grayscale_prob:
        out = rgb_to_grayscale(out)

    return np.clip(out, 0.0, 1.0).astype(img.dtype)


def gaussian_kernel(sigma):
    """
    半径为 ⌈3σ⌉ 的归一化离散高斯核

    Args:
        sigma (float): 标准差

    Returns:
        numpy.ndarray: 长度 2r+1 的核
    """
    radius = max(1, int(math.ceil(3.0 * sigma)))
    taps = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (taps / sigma) ** 2)
    return kernel / kernel.sum()


def gaussian_blur(img, sigma):
    """
    可分离高斯模糊，反射边界

    Args:
        img (numpy.ndarray): C×H×W 图像
        sigma (float): 标准差，必须为正

    Returns:
        numpy.ndarray: 模糊后的图像
    """
    kernel = gaussian_kernel(sigma).astype(img.dtype)
    out = correlate1d(img, kernel, axis=1, mode='reflect')
    return correlate1d(out, kernel, axis=2, mode='reflect')


def random_blur(img, rng, cfg):
    """以 blur_prob 概率做随机 sigma 的高斯模糊"""
    if rng.random() < cfg.blur_prob:
        return gaussian_blur(img, rng.uniform(*cfg.blur_sigma_range))
    return img
