"""
中心差分梯度检查
"""

from dataclasses import dataclass, field

import numpy as np

from flowe.core.errors import DimensionError
from flowe.network.model import forward, backward


DEFAULT_EPSILON = 1e-5
DEFAULT_TOLERANCE = 1e-5
# 相对误差分母的下限，相对于该张量解析梯度的最大绝对值
RELATIVE_FLOOR = 1e-3


def relative_error(analytic, numeric, floor=0.0):
    """
    逐元素相对误差 |a−n| / max(|a|, |n|, floor)

    Returns:
        numpy.ndarray: 相对误差
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), max(floor, 1e-300))
    return np.abs(analytic - numeric) / denom


def numeric_gradient(func, x, epsilon=DEFAULT_EPSILON, indices=None):
    """
    标量函数对数组的中心差分梯度

    Args:
        func: 无参可调用对象，返回标量；会读取 x 的当前值
        x (numpy.ndarray): 被扰动的数组（原地扰动后恢复）
        epsilon (float): 步长
        indices (list): 要计算的扁平下标，None 表示全部

    Returns:
        numpy.ndarray: 与 x 同形状的梯度，未计算的位置为零
    """
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    if not np.shares_memory(flat, x):
        raise DimensionError("numeric_gradient needs a contiguous array")
    for index in (range(flat.size) if indices is None else indices):
        original = flat[index]
        flat[index] = original + epsilon
        plus = func()
        flat[index] = original - epsilon
        minus = func()
        flat[index] = original
        grad.reshape(-1)[index] = (plus - minus) / (2.0 * epsilon)
    return grad


@dataclass
class GradCheckReport:
    """梯度检查结果，按参数记录最大相对误差"""

    errors: dict = field(default_factory=dict)  # 参数名 → 最大相对误差
    checked: dict = field(default_factory=dict)  # 参数名 → 比较的元素数
    skipped: dict = field(default_factory=dict)  # 参数名 → 因ReLU折点跳过的元素数
    epsilon: float = DEFAULT_EPSILON

    @property
    def max_error(self):
        """所有参数中的最大相对误差"""
        return max(self.errors.values(), default=0.0)

    def layer_errors(self):
        """按层（encoder.0 等）汇总最大相对误差"""
        layers = {}
        for name, error in self.errors.items():
            layer = name.rsplit(".", 1)[0]
            layers[layer] = max(layers.get(layer, 0.0), error)
        return layers

    def passed(self, tolerance=DEFAULT_TOLERANCE):
        """是否全部低于容差"""
        return self.max_error < tolerance

    def to_dict(self):
        """可JSON序列化的字典"""
        return {
            "epsilon": self.epsilon,
            "max_error": self.max_error,
            "layers": self.layer_errors(),
            "parameters": {
                name: {"error": self.errors[name], "checked": self.checked[name], "skipped": self.skipped[name]}
                for name in self.errors
            }
        }


def _same_patterns(a, b):
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def check_param_gradients(objective, params, epsilon=DEFAULT_EPSILON, max_entries=None, rng=None):
    """
    对任意目标函数检查参数梯度

    Args:
        objective: objective(params, need_grad) → (loss, grads 或 None, relu_patterns)
        params (ModelParams): 检查点处的参数
        epsilon (float): 差分步长
        max_entries (int): 每个参数张量最多比较的元素数，None 表示全部
        rng (numpy.random.Generator): 用于抽样元素

    Returns:
        GradCheckReport: 检查结果
    """
    rng = np.random.default_rng(0) if rng is None else rng
    _, grads, base_patterns = objective(params, True)
    report = GradCheckReport(epsilon=epsilon)

    for name in params.names():
        array = params.arrays[name]
        analytic = grads[name]
        size = array.size
        if max_entries is None or max_entries >= size:
            indices = np.arange(size)
        else:
            indices = np.sort(rng.choice(size, size=max_entries, replace=False))
        floor = RELATIVE_FLOOR * float(np.abs(analytic).max()) if analytic.size else 0.0

        worst, checked, skipped = 0.0, 0, 0
        for index in indices:
            values = []
            kink = False
            for sign in (1.0, -1.0):
                perturbed = dict(params.arrays)
                bumped = array.copy()
                bumped.reshape(-1)[index] += sign * epsilon
                perturbed[name] = bumped
                loss, _, patterns = objective(params.replace_arrays(perturbed), False)
                kink = kink or not _same_patterns(patterns, base_patterns)
                values.append(loss)
            if kink:
                skipped += 1
                continue
            numeric = (values[0] - values[1]) / (2.0 * epsilon)
            worst = max(worst, float(relative_error(analytic.reshape(-1)[index], numeric, floor)))
            checked += 1

        report.errors[name] = worst
        report.checked[name] = checked
        report.skipped[name] = skipped
    return report


def projection_objective(inputs, direction):
    """
    探针损失 L = Σ r·p，用于单独检查网络前向/反向

    Args:
        inputs (numpy.ndarray): 网络输入
        direction (numpy.ndarray): 与 p 同形状的固定随机张量

    Returns:
        可调用的目标函数
    """
    def objective(params, need_grad):
        _, _, p, trace = forward(params, inputs, keep_trace=True)
        loss = float(np.sum(direction * p))
        grads = backward(params, trace, direction) if need_grad else None
        return loss, grads, trace.relu_patterns()
    return objective


def finite_diff_check(params, inputs, epsilon=DEFAULT_EPSILON, max_entries=None, rng=None):
    """
    用探针损失对在线网络的全部参数做中心差分检查

    Args:
        params (ModelParams): 64位在线网络参数
        inputs (numpy.ndarray): 3×H×W 或 N×3×H×W 输入
        epsilon (float): 差分步长
        max_entries (int): 每个参数张量最多比较的元素数
        rng (numpy.random.Generator): 随机数生成器，决定探针与抽样

    Returns:
        GradCheckReport: 每个参数与每层的最大相对误差
    """
    if params.dtype != np.float64:
        raise DimensionError(f"finite_diff_check needs float64 parameters, got {params.dtype}")
    rng = np.random.default_rng(0) if rng is None else rng
    _, _, p, _ = forward(params, inputs)
    direction = rng.standard_normal(p.shape)
    return check_param_gradients(projection_objective(inputs, direction), params, epsilon, max_entries, rng)
