"""
优化器（SGD动量与LARS）以及目标网络的EMA更新
"""

from dataclasses import dataclass, field

import numpy as np

from flowe.core.errors import NonFiniteGradientError, ConfigError


@dataclass(eq=False)
class OptimizerState:
    """优化器状态：每个参数的动量速度"""

    velocity: dict = field(default_factory=dict)

    @staticmethod
    def zeros_like(params):
        """与参数同形状的零速度"""
        return OptimizerState({name: np.zeros_like(array) for name, array in params.arrays.items()})

    def copy(self):
        """深拷贝"""
        return OptimizerState({name: v.copy() for name, v in self.velocity.items()})


def is_bias(name):
    """是否为偏置参数"""
    return name.endswith(".bias")


def check_finite(grads):
    """
    检查梯度全部有限

    Raises:
        NonFiniteGradientError: 第一个含非有限值的参数
    """
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise NonFiniteGradientError(name)


def global_grad_norm(grads):
    """所有梯度拼接后的L2范数"""
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def _momentum_update(w, g, v, lr, momentum, weight_decay):
    v_new = momentum * v + g + weight_decay * w
    return w - lr * v_new, v_new


def sgd_momentum_step(params, grads, lr, momentum, weight_decay, state=None):
    """
    SGD动量：v ← m·v + g + wd·w；w ← w − lr·v

    Args:
        params (ModelParams): 当前参数
        grads (dict): 参数名 → 梯度
        lr (float): 学习率
        momentum (float): 动量系数
        weight_decay (float): 权重衰减
        state (OptimizerState): 优化器状态，None 表示零速度

    Returns:
        tuple: (新参数, 新状态)
    """
    check_finite(grads)
    state = OptimizerState.zeros_like(params) if state is None else state
    arrays, velocity = {}, {}
    for name, w in params.arrays.items():
        arrays[name], velocity[name] = _momentum_update(
            w, grads[name], state.velocity[name], lr, momentum, weight_decay
        )
    return params.replace_arrays(arrays), OptimizerState(velocity)


def lars_trust_ratio(w, g, weight_decay, eps=1e-9, trust=1.0):
    """
    逐层信任比 η = trust·‖w‖/(‖g‖ + wd·‖w‖ + eps)

    ‖w‖ 或 ‖g‖ 为零时返回 1（不乘 trust），该层退化为普通SGD动量步长：
    零初始化的权重仍能离开原点，零梯度的层本来就不移动。
    """
    w_norm = float(np.linalg.norm(w))
    g_norm = float(np.linalg.norm(g))
    if w_norm == 0.0 or g_norm == 0.0:
        return 1.0
    return trust * w_norm / (g_norm + weight_decay * w_norm + eps)


def lars_step(params, grads, lr, momentum, weight_decay, state=None, eps=1e-9, trust=1.0):
    """
    LARS：权重参数的学习率乘以逐层信任比后做与SGD相同的更新；
    偏置不做信任比缩放也不做权重衰减

    Args:
        params (ModelParams): 当前参数
        grads (dict): 参数名 → 梯度
        lr (float): 学习率
        momentum (float): 动量系数
        weight_decay (float): 权重衰减
        state (OptimizerState): 优化器状态
        eps (float): 信任比分母中的小常数
        trust (float): 信任系数

    Returns:
        tuple: (新参数, 新状态)
    """
    check_finite(grads)
    state = OptimizerState.zeros_like(params) if state is None else state
    arrays, velocity = {}, {}
    for name, w in params.arrays.items():
        g = grads[name]
        if is_bias(name):
            layer_lr, layer_wd = lr, 0.0
        else:
            layer_lr = lr * lars_trust_ratio(w, g, weight_decay, eps, trust)
            layer_wd = weight_decay
        arrays[name], velocity[name] = _momentum_update(w, g, state.velocity[name], layer_lr, momentum, layer_wd)
    return params.replace_arrays(arrays), OptimizerState(velocity)


def ema_update(online, target, tau):
    """
    目标网络EMA：ξ ← τ·ξ + (1−τ)·θ，只作用于编码器和投影头

    Args:
        online (ModelParams): 在线网络
        target (ModelParams): 目标网络（不含预测头）
        tau (float): EMA系数，取值 [0, 1]

    Returns:
        ModelParams: 新的目标网络
    """
    if not 0.0 <= tau <= 1.0:
        raise ConfigError(f"EMA tau must lie in [0, 1], got {tau}")
    online.check_compatible(target)
    arrays = {
        name: tau * xi + (1.0 - tau) * online.arrays[name]
        for name, xi in target.arrays.items()
    }
    return target.replace_arrays(arrays)
