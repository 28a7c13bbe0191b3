"""
合成视频渲染：超采样抗锯齿图像、像素中心的类别标签、解析光流与遮挡掩码
"""

import math
from dataclasses import dataclass

import numpy as np

from flowe.core.errors import DimensionError
from flowe.geometry.affine import AffineMap, affine_from_params
from flowe.geometry.flow import FlowField, pixel_grid
from flowe.geometry.sampling import in_bounds


BACKGROUND = -1
BACKGROUND_WAVES = 4
TEXTURE_CONTRAST = 0.3


@dataclass(frozen=True, eq=False)
class FramePacket:
    """单帧渲染结果"""

    image: np.ndarray  # 3×H×W，取值 [0, 1]
    labels: np.ndarray  # H×W 类别编号，0 为背景
    t: int = 0
    flow_to_next: FlowField = None  # t → t+gap
    occlusion_next: np.ndarray = None  # t 时刻像素在 t+gap 被遮挡或出画
    flow_from_next: FlowField = None  # t+gap → t


def shape_pose(shape, t):
    """t 时刻形状的物体坐标 → 图像坐标"""
    return affine_from_params(
        scale=(1.0 + shape.scale_rate) ** t,
        angle_deg=shape.angle_deg + t * shape.angular_velocity,
        tx=shape.center[0] + t * shape.velocity[0],
        ty=shape.center[1] + t * shape.velocity[1]
    )


def ego_step(spec):
    """背景一帧的自运动：绕画布中心缩放旋转，再平移"""
    height, width = spec.canvas
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    about_center = affine_from_params(1.0 + spec.ego.scale_rate, spec.ego.rotation_deg)
    to_origin = AffineMap((1.0, 0.0, -cx, 0.0, 1.0, -cy))
    back = AffineMap((1.0, 0.0, cx + spec.ego.shift[0], 0.0, 1.0, cy + spec.ego.shift[1]))
    return back.compose(about_center.compose(to_origin))


def ego_pose(spec, t):
    """t 时刻背景纹理坐标 → 图像坐标"""
    if t < 0 or int(t) != t:
        raise DimensionError(f"frame index must be a non-negative integer, got {t}")
    return AffineMap(np.linalg.matrix_power(ego_step(spec).matrix3(), int(t))[:2])


def _inside(shape, ox, oy):
    """物体坐标是否落在形状内"""
    if shape.kind == "circle":
        r = shape.size[0]
        return ox * ox + oy * oy <= r * r
    if shape.kind == "rectangle":
        return (np.abs(ox) <= shape.size[0]) & (np.abs(oy) <= shape.size[1])
    # 外接圆半径为 r 的正三角形，顶点朝上；三条边的外法向在 90°、210°、330°
    r = shape.size[0]
    inside = np.ones(np.shape(ox), dtype=bool)
    for angle in (90.0, 210.0, 330.0):
        nx, ny = math.cos(math.radians(angle)), math.sin(math.radians(angle))
        inside &= ox * nx + oy * ny <= 0.5 * r
    return inside


def owner_map(spec, t, xs, ys):
    """
    每个坐标处最上层的形状下标，背景为 -1

    Args:
        spec (SceneSpec): 场景
        t (int): 帧号
        xs (numpy.ndarray): x坐标
        ys (numpy.ndarray): y坐标

    Returns:
        numpy.ndarray: 与 xs 同形状的整数数组
    """
    owner = np.full(np.shape(xs), BACKGROUND, dtype=np.int64)
    for index in spec.depth_order:
        shape = spec.shapes[index]
        ox, oy = shape_pose(shape, t).inverse().apply(xs, ys)
        owner[_inside(shape, ox, oy)] = index
    return owner


def _shape_texture(shape, ox, oy):
    """物体坐标下的类别纹理"""
    k = 2.0 * math.pi / shape.texture_period
    if shape.texture == "stripes":
        pattern = np.sin(k * ox)
    elif shape.texture == "checker":
        pattern = np.sin(k * ox) * np.sin(k * oy)
    else:
        pattern = np.cos(k * np.sqrt(ox * ox + oy * oy))
    return 1.0 - TEXTURE_CONTRAST + TEXTURE_CONTRAST * pattern


def _background_waves(texture_seed):
    """由纹理种子确定的背景正弦波参数"""
    rng = np.random.default_rng(texture_seed)
    base = rng.uniform(0.3, 0.6, size=3)
    waves = []
    for _ in range(BACKGROUND_WAVES):
        freq = rng.uniform(0.03, 0.12)
        direction = rng.uniform(0.0, math.pi)
        phase = rng.uniform(0.0, 2.0 * math.pi)
        amplitude = rng.uniform(0.04, 0.12, size=3)
        waves.append((freq, direction, phase, amplitude))
    return base, waves


def _background_color(spec, bx, by):
    """背景纹理坐标处的颜色，3×... 数组"""
    base, waves = _background_waves(spec.texture_seed)
    color = np.broadcast_to(base.reshape(3, *([1] * np.ndim(bx))), (3,) + np.shape(bx)).copy()
    for freq, direction, phase, amplitude in waves:
        wave = np.sin(2.0 * math.pi * freq * (bx * math.cos(direction) + by * math.sin(direction)) + phase)
        color += amplitude.reshape(3, *([1] * np.ndim(bx))) * wave
    return np.clip(color, 0.0, 1.0)


def shade(spec, t, xs, ys):
    """
    任意坐标处的颜色

    Returns:
        numpy.ndarray: 3×xs.shape 颜色
    """
    bx, by = ego_pose(spec, t).inverse().apply(xs, ys)
    color = _background_color(spec, bx, by)
    owner = owner_map(spec, t, xs, ys)
    for index, shape in enumerate(spec.shapes):
        covered = owner == index
        if not covered.any():
            continue
        ox, oy = shape_pose(shape, t).inverse().apply(xs[covered], ys[covered])
        texture = _shape_texture(shape, ox, oy)
        for channel in range(3):
            color[channel][covered] = np.clip(shape.color[channel] * texture, 0.0, 1.0)
    return color


def render_frame(spec, t):
    """
    渲染一帧：超采样平均得到抗锯齿图像，标签取像素中心的归属

    Args:
        spec (SceneSpec): 场景
        t (int): 帧号

    Returns:
        FramePacket: 不含光流的帧
    """
    xs, ys = pixel_grid(spec.canvas)
    n = spec.supersample
    offsets = (np.arange(n) + 0.5) / n - 0.5
    image = np.zeros((3,) + tuple(spec.canvas))
    for dy in offsets:
        for dx in offsets:
            image += shade(spec, t, xs + dx, ys + dy)
    image /= n * n

    owner = owner_map(spec, t, xs, ys)
    class_ids = np.array([0] + [shape.class_id for shape in spec.shapes], dtype=np.int64)
    labels = class_ids[owner + 1]
    return FramePacket(image, labels, t)


def _motion_flow(spec, t_from, t_to):
    """t_from 帧每个像素中心到 t_to 帧的解析位移与遮挡"""
    height, width = spec.canvas
    xs, ys = pixel_grid(spec.canvas)
    owner = owner_map(spec, t_from, xs, ys)

    dest_x, dest_y = ego_pose(spec, t_to).compose(ego_pose(spec, t_from).inverse()).apply(xs, ys)
    for index, shape in enumerate(spec.shapes):
        covered = owner == index
        if not covered.any():
            continue
        motion = shape_pose(shape, t_to).compose(shape_pose(shape, t_from).inverse())
        dest_x[covered], dest_y[covered] = motion.apply(xs[covered], ys[covered])

    visible = in_bounds(dest_x, dest_y, height, width) & (owner_map(spec, t_to, dest_x, dest_y) == owner)
    return FlowField(dest_x - xs, dest_y - ys, visible), ~visible


def gt_flow(spec, t, gap=1, direction="forward"):
    """
    解析光流与遮挡掩码

    Args:
        spec (SceneSpec): 场景
        t (int): 起始帧
        gap (int): 帧间隔
        direction (str): "forward" 为 t → t+gap，"backward" 为 t+gap → t

    Returns:
        tuple: (FlowField, 遮挡掩码)，被遮挡或出画的像素 valid 为假
    """
    if gap < 1:
        raise DimensionError(f"frame gap must be positive, got {gap}")
    if direction == "forward":
        return _motion_flow(spec, t, t + gap)
    if direction == "backward":
        return _motion_flow(spec, t + gap, t)
    raise DimensionError(f"direction must be 'forward' or 'backward', got '{direction}'")


def add_flow_noise(flow, sigma, rng):
    """
    加入独立同分布的零均值高斯位移噪声，有效性不变

    Args:
        flow (FlowField): 光流
        sigma (float): 标准差（像素）
        rng (numpy.random.Generator): 随机数生成器

    Returns:
        FlowField: 加噪后的光流
    """
    if sigma < 0:
        raise DimensionError(f"noise sigma must be non-negative, got {sigma}")
    if sigma == 0:
        return flow
    return FlowField(
        flow.u + rng.normal(0.0, sigma, size=flow.shape),
        flow.v + rng.normal(0.0, sigma, size=flow.shape),
        flow.valid
    )


def render_packet(spec, t, gap=1, rng=None):
    """
    渲染一帧并附带到 t+gap 的前向、后向光流与遮挡；
    场景配置了光流噪声时对两个方向都加噪

    Args:
        spec (SceneSpec): 场景
        t (int): 帧号
        gap (int): 帧间隔
        rng (numpy.random.Generator): 噪声随机数，None 时由 (纹理种子, t, gap) 决定

    Returns:
        FramePacket: 完整的帧
    """
    frame = render_frame(spec, t)
    forward, occlusion = gt_flow(spec, t, gap, "forward")
    backward, _ = gt_flow(spec, t, gap, "backward")
    if spec.noise_sigma_flow > 0:
        rng = np.random.default_rng([spec.texture_seed, t, gap]) if rng is None else rng
        forward = add_flow_noise(forward, spec.noise_sigma_flow, rng)
        backward = add_flow_noise(backward, spec.noise_sigma_flow, rng)
    return FramePacket(frame.image, frame.labels, t, forward, occlusion, backward)
