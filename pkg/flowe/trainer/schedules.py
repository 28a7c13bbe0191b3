"""
学习率与EMA系数的余弦调度
"""

import math


def cosine_lr(step, total_steps, base_lr):
    """无重启余弦衰减，lr(0)=base_lr，lr(T)=0"""
    if total_steps <= 0:
        return base_lr
    t = min(max(step, 0), total_steps)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * t / total_steps))


def ema_tau_schedule(step, total_steps, tau0, schedule="cosine"):
    """
    EMA系数 τ = 1 − (1−τ₀)·(cos(πt/T)+1)/2，从 τ₀ 单调增加到 1

    Args:
        step (int): 当前步
        total_steps (int): 总步数
        tau0 (float): 初始系数
        schedule (str): "cosine" 或 "constant"

    Returns:
        float: 当前步的 τ
    """
    if schedule == "constant" or total_steps <= 0:
        return tau0
    t = min(max(step, 0), total_steps)
    return 1.0 - (1.0 - tau0) * (math.cos(math.pi * t / total_steps) + 1.0) / 2.0
