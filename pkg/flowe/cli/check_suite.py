"""
自检套件：数值梯度检查与变形代数性质
"""

import time
from dataclasses import dataclass, field

import numpy as np

from flowe.core.logging_setup import get_logger
from flowe.augment.config import identity_config
from flowe.geometry.affine import affine_identity, affine_from_params
from flowe.geometry.flo_io import flo_read, flo_write
from flowe.geometry.flow import FlowField, pixel_grid
from flowe.geometry.sampling import (
    bilinear_sample_grid, sample_plane_validity, warp_features, upsample_bilinear, upsample_bilinear_adjoint,
    channel_normalize, channel_normalize_backward
)
from flowe.geometry.transform import compose_transform, affine_correspondence
from flowe.network.layers import (
    ConvLayerSpec, conv2d_forward, conv2d_backward, relu, relu_backward,
    standardize_forward, standardize_backward, batch_norm_forward, batch_norm_backward
)
from flowe.network.gradcheck import (
    numeric_gradient, relative_error, finite_diff_check, check_param_gradients, DEFAULT_TOLERANCE
)
from flowe.network.model import init_params, default_arch
from flowe.trainer.config import TrainConfig
from flowe.trainer.data_sources import PairSample
from flowe.trainer.loss import flowe_loss
from flowe.trainer.optimizers import ema_update
from flowe.trainer.train_system import prepare_batch, loss_objective


logger = get_logger('check')

EXACT_TOL = 1e-9
LOSS_SAMPLES = 10000


@dataclass
class CheckResult:
    """单项检查结果"""

    name: str
    passed: bool
    value: float
    limit: float
    seconds: float = 0.0


@dataclass
class CheckReport:
    """自检报告"""

    results: list = field(default_factory=list)

    @property
    def passed(self):
        """全部通过"""
        return all(result.passed for result in self.results)

    @property
    def failures(self):
        """未通过的检查"""
        return [result for result in self.results if not result.passed]

    def to_dict(self):
        """可JSON序列化的字典"""
        return {
            "passed": self.passed,
            "checks": [
                {"name": r.name, "passed": r.passed, "value": r.value, "limit": r.limit, "seconds": r.seconds}
                for r in self.results
            ]
        }


def _layer_gradient_error(rng, forward_fn, backward_fn, x):
    """对单层输入梯度做中心差分比较，排除ReLU折点"""
    direction = rng.standard_normal(forward_fn(x).shape)
    analytic = backward_fn(x, direction)
    numeric = numeric_gradient(lambda: float(np.sum(direction * forward_fn(x))), x)
    floor = 1e-3 * float(np.abs(analytic).max())
    return float(relative_error(analytic, numeric, floor).max())


def check_conv_layers(rng):
    """卷积 3×3 s1/s2、空洞卷积与 1×1 卷积的输入与参数梯度"""
    worst = 0.0
    for spec in (
        ConvLayerSpec(2, 3, kernel=3, stride=1, activation="none"),
        ConvLayerSpec(2, 3, kernel=3, stride=2, activation="none"),
        ConvLayerSpec(2, 3, kernel=3, dilation=2, activation="none"),
        ConvLayerSpec(2, 3, kernel=1, activation="none"),
    ):
        w = rng.standard_normal(spec.weight_shape)
        b = rng.standard_normal(spec.out_ch)
        x = rng.standard_normal((2, 7, 6))
        direction = rng.standard_normal(conv2d_forward(x, spec, w, b)[0].shape)
        _, trace = conv2d_forward(x, spec, w, b)
        grad_w, grad_b, grad_x = conv2d_backward(trace, direction)

        def loss():
            return float(np.sum(direction * conv2d_forward(x, spec, w, b)[0]))

        for analytic, array in ((grad_x, x), (grad_w, w), (grad_b, b)):
            numeric = numeric_gradient(loss, array)
            floor = 1e-3 * float(np.abs(analytic).max())
            worst = max(worst, float(relative_error(analytic, numeric, floor).max()))
    return worst


def check_pointwise_layers(rng):
    """ReLU、通道标准化、批次标准化、通道归一化与上采样的梯度"""
    worst = 0.0
    # 远离零点的输入，避免ReLU折点
    x = rng.standard_normal((3, 4, 5))
    x = np.where(np.abs(x) < 0.1, 0.5, x)
    worst = max(worst, _layer_gradient_error(rng, relu, relu_backward, x))
    worst = max(worst, _layer_gradient_error(
        rng, lambda v: standardize_forward(v)[0], lambda v, g: standardize_backward(standardize_forward(v)[1], g),
        rng.standard_normal((4, 3, 3))
    ))
    worst = max(worst, _layer_gradient_error(
        rng, lambda v: batch_norm_forward(v)[0], lambda v, g: batch_norm_backward(batch_norm_forward(v)[1], g),
        rng.standard_normal((3, 2, 3, 3))
    ))
    worst = max(worst, _layer_gradient_error(
        rng, channel_normalize, channel_normalize_backward, rng.standard_normal((4, 3, 3))
    ))
    worst = max(worst, _layer_gradient_error(
        rng, lambda v: upsample_bilinear(v, 7, 9), lambda v, g: upsample_bilinear_adjoint(g, 3, 4),
        rng.standard_normal((2, 3, 4))
    ))
    return worst


def check_model_gradients(rng, max_entries=6):
    """默认网络在 3×16×16 输入上的参数梯度"""
    params = init_params(rng, default_arch())
    report = finite_diff_check(params, rng.uniform(0.0, 1.0, size=(3, 16, 16)), max_entries=max_entries, rng=rng)
    return report.max_error


def check_composite_loss(rng, max_entries=4):
    """完整训练损失（上采样、归一化、掩码）对在线网络参数的梯度"""
    params = init_params(rng, default_arch())
    target = init_params(rng, default_arch()).target_copy()
    frames = rng.uniform(0.0, 1.0, size=(3, 16, 16))
    sample = PairSample(frames, np.roll(frames, 1, axis=2), FlowField.constant((16, 16), 1.0, 0.0))
    cfg = TrainConfig(total_steps=1, batch_size=1)
    prepared = prepare_batch([sample], cfg, identity_config((16, 16)), rng)
    report = check_param_gradients(loss_objective(target, prepared), params, max_entries=max_entries, rng=rng)
    return report.max_error


def check_bilinear_exactness(rng):
    """线性场上双线性采样精确"""
    xs, ys = pixel_grid((9, 11))
    plane = np.stack([3.0 * xs + 2.0 * ys + 1.0, -xs + 0.5 * ys])
    px = rng.uniform(0.0, 10.0, size=200)
    py = rng.uniform(0.0, 8.0, size=200)
    out, _ = bilinear_sample_grid(plane, px, py)
    expected = np.stack([3.0 * px + 2.0 * py + 1.0, -px + 0.5 * py])
    return float(np.abs(out - expected).max())


def check_affine_roundtrip(rng):
    """仿射变换与其逆的往返"""
    worst = 0.0
    for _ in range(100):
        A = affine_from_params(rng.uniform(0.5, 2.0), rng.uniform(-180, 180), *rng.uniform(-20, 20, size=2))
        x, y = rng.uniform(0, 64, size=2)
        rx, ry = A.inverse().apply(*A.apply(x, y))
        worst = max(worst, abs(rx - x), abs(ry - y))
    return worst


def check_transform_consistency(rng):
    """恒等组合为恒等对应；只有仿射时与直接计算一致"""
    shape = (12, 16)
    identity = affine_identity()
    T = compose_transform(identity, FlowField.zeros(shape), identity, shape)
    xs, ys = pixel_grid(shape)
    worst = max(float(np.abs(T.tx - xs).max()), float(np.abs(T.ty - ys).max()))

    A1 = affine_from_params(rng.uniform(0.8, 1.2), rng.uniform(-20, 20), 1.0, -2.0)
    A2 = affine_from_params(rng.uniform(0.8, 1.2), rng.uniform(-20, 20), -1.5, 0.5)
    T = compose_transform(A1, FlowField.zeros((20, 24)), A2, shape, in_shape=(20, 24))
    direct = A2.compose(A1.inverse())
    dx, dy = direct.apply(xs, ys)
    worst = max(worst, float(np.abs(T.tx - dx).max()), float(np.abs(T.ty - dy).max()))
    return worst


def check_warp_inverse(rng):
    """纯仿射对应下，线性场变形再逆变形回到原值"""
    shape = (16, 16)
    xs, ys = pixel_grid(shape)
    f = np.stack([2.0 * xs - ys + 3.0, 0.5 * xs + ys])
    A = affine_from_params(rng.uniform(0.9, 1.1), rng.uniform(-10, 10), 0.5, -0.3)
    once, once_mask = warp_features(f, affine_correspondence(A, shape))
    back, mask = warp_features(once, affine_correspondence(A.inverse(), shape))
    # 逆变形的所有插值邻居都必须来自有效的第一次变形
    ix, iy = A.inverse().apply(xs, ys)
    ok = mask & sample_plane_validity(once_mask, ix, iy)
    if not ok.any():
        return float("inf")
    return float(np.abs(back - f)[:, ok].max())


def check_flo_roundtrip(rng):
    """flo 文件按位往返"""
    flow = FlowField(rng.standard_normal((5, 7)).astype(np.float32), rng.standard_normal((5, 7)).astype(np.float32))
    data = flo_write(flow)
    return 0.0 if flo_write(flo_read(data)) == data else 1.0


def check_loss_bounds(rng):
    """损失落在 [0, 4]，对径输入为 4"""
    worst = 0.0
    for _ in range(LOSS_SAMPLES):
        p1 = rng.standard_normal((4, 3, 3))
        p2 = rng.standard_normal((4, 3, 3))
        mask = rng.random((3, 3)) < 0.7
        loss, _ = flowe_loss(p1, p2, mask)
        worst = max(worst, max(0.0, -loss), max(0.0, loss - 4.0))
    p = rng.standard_normal((4, 3, 3))
    loss, _ = flowe_loss(p, -p, np.ones((3, 3), dtype=bool))
    return max(worst, abs(loss - 4.0))


def check_ema_contraction(rng):
    """固定τ时目标网络与在线网络的距离按 τ^k 收缩；τ=0 复制在线网络，τ=1 保持不变"""
    online = init_params(rng, default_arch())
    target = init_params(rng, default_arch()).target_copy()
    tau = 0.9

    def distance(t):
        return float(np.sqrt(sum(np.sum((t.arrays[k] - online.arrays[k]) ** 2) for k in t.arrays)))

    frozen = ema_update(online, target, 1.0)
    copied = ema_update(online, target, 0.0)
    worst = max(
        max(float(np.abs(frozen.arrays[k] - target.arrays[k]).max()) for k in target.arrays),
        distance(copied)
    )
    start = distance(target)
    for _ in range(100):
        target = ema_update(online, target, tau)
    return max(worst, abs(distance(target) - tau ** 100 * start))


CHECKS = (
    ("bilinear_linear_exactness", check_bilinear_exactness, EXACT_TOL),
    ("affine_roundtrip", check_affine_roundtrip, EXACT_TOL),
    ("transform_consistency", check_transform_consistency, EXACT_TOL),
    ("warp_inverse_linear", check_warp_inverse, EXACT_TOL),
    ("flo_roundtrip", check_flo_roundtrip, 0.5),
    ("loss_bounds", check_loss_bounds, EXACT_TOL),
    ("ema_contraction", check_ema_contraction, 1e-12),
    ("grad_conv_layers", check_conv_layers, DEFAULT_TOLERANCE),
    ("grad_pointwise_layers", check_pointwise_layers, DEFAULT_TOLERANCE),
    ("grad_model", check_model_gradients, DEFAULT_TOLERANCE),
    ("grad_composite_loss", check_composite_loss, DEFAULT_TOLERANCE),
)


def run_check_suite(seed=0, names=None):
    """
    运行自检套件

    Args:
        seed (int): 随机种子
        names (list): 只运行这些检查，None 表示全部

    Returns:
        CheckReport: 报告
    """
    report = CheckReport()
    for name, check, limit in CHECKS:
        if names is not None and name not in names:
            continue
        start = time.perf_counter()
        value = float(check(np.random.default_rng([seed, len(report.results)])))
        seconds = time.perf_counter() - start
        passed = value < limit
        report.results.append(CheckResult(name, passed, value, limit, seconds))
        log = logger.info if passed else logger.error
        log(f"{name}: {'ok' if passed else 'FAILED'} ({value:.3e} < {limit:.0e}, {seconds:.2f}s)")
    return report
