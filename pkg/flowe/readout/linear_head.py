"""
冻结编码器上的单层1×1卷积分割读出头
"""

from dataclasses import dataclass, field

import numpy as np

from flowe.core.errors import DimensionError, LabelError
from flowe.core.logging_setup import get_logger
from flowe.core.workers import ordered_map
from flowe.geometry.sampling import interpolation_matrix, upsample_bilinear, upsample_bilinear_adjoint
from flowe.network.layers import ConvLayerSpec, conv2d_forward, conv2d_backward
from flowe.network.model import encode
from flowe.trainer.schedules import cosine_lr


logger = get_logger('readout')

STD_FLOOR = 1e-6


def extract_features(encoder_params, images, batch_size=8, workers=None):
    """
    用冻结编码器提取步长8的特征

    Args:
        encoder_params (ModelParams): 编码器参数，整个过程中不被修改
        images (numpy.ndarray): N×3×H×W 图像
        batch_size (int): 每次前向的图像数
        workers (int): 并行数

    Returns:
        numpy.ndarray: N×C×H/8×W/8 特征
    """
    images = np.asarray(images, dtype=encoder_params.dtype)
    if images.ndim != 4:
        raise DimensionError(f"images must be N×3×H×W, got {images.shape}")
    chunks = [images[i:i + batch_size] for i in range(0, len(images), batch_size)]
    return np.concatenate(ordered_map(lambda chunk: encode(encoder_params, chunk), chunks, workers))


@dataclass(eq=False)
class ReadoutHead:
    """读出头：逐通道标准化后接 1×1 卷积"""

    spec: ConvLayerSpec
    weight: np.ndarray
    bias: np.ndarray
    feature_mean: np.ndarray  # C
    feature_std: np.ndarray  # C
    loss_curve: list = field(default_factory=list)

    def standardize(self, features):
        """按训练集统计量标准化特征"""
        return (features - self.feature_mean.reshape(1, -1, 1, 1)) / self.feature_std.reshape(1, -1, 1, 1)

    def logits(self, features, out_shape=None):
        """
        读出头的逻辑值

        Args:
            features (numpy.ndarray): N×C×h×w 特征
            out_shape (tuple): 上采样到的尺寸，None 表示保持特征分辨率

        Returns:
            numpy.ndarray: N×K×H×W 逻辑值
        """
        out, _ = conv2d_forward(self.standardize(features), self.spec, self.weight, self.bias)
        if out_shape is not None:
            out = upsample_bilinear(out, *out_shape)
        return out


def init_head(rng, in_ch, class_count, features):
    """初始化读出头，标准化统计量取自训练特征"""
    spec = ConvLayerSpec(in_ch, class_count, kernel=1, activation="none")
    weight = rng.standard_normal(spec.weight_shape) * np.sqrt(1.0 / in_ch)
    mean = features.mean(axis=(0, 2, 3))
    std = np.maximum(features.std(axis=(0, 2, 3)), STD_FLOOR)
    return ReadoutHead(spec, weight, np.zeros(class_count), mean, std)


def class_balance_weights(labels, class_count):
    """
    按像素频率的倒数加权，使每个出现的类别总权重相同；未出现的类别权重为0

    Args:
        labels (numpy.ndarray): 整数标签
        class_count (int): 类别数

    Returns:
        numpy.ndarray: 长度为 class_count 的权重，像素加权平均为1
    """
    counts = np.bincount(np.asarray(labels).ravel(), minlength=class_count).astype(np.float64)
    present = counts > 0
    weights = np.zeros(class_count)
    weights[present] = counts.sum() / (present.sum() * counts[present])
    return weights


def softmax_cross_entropy(logits, labels, class_weights=None):
    """
    逐像素softmax交叉熵的（加权）平均值及其梯度

    Args:
        logits (numpy.ndarray): N×K×H×W
        labels (numpy.ndarray): N×H×W 整数标签
        class_weights (numpy.ndarray): 长度为K的类别权重，None 表示等权

    Returns:
        tuple: (loss, grad_logits)
    """
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    n, k = logits.shape[:2]
    onehot = np.moveaxis(np.eye(k)[labels], -1, 1)
    log_probs = shifted - np.log(exp.sum(axis=1, keepdims=True))
    if class_weights is None:
        count = labels.size
        loss = -float(np.sum(onehot * log_probs)) / count
        return loss, (probs - onehot) / count
    pixel_weights = np.asarray(class_weights, dtype=np.float64)[labels][:, None]
    total = float(pixel_weights.sum())
    if total <= 0:
        return 0.0, np.zeros_like(logits)
    loss = -float(np.sum(pixel_weights * onehot * log_probs)) / total
    return loss, pixel_weights * (probs - onehot) / total


def downsample_labels(labels, height, width):
    """对齐角点的最近邻标签下采样"""
    big_h, big_w = labels.shape[-2:]
    rows = np.argmax(interpolation_matrix(height, big_h), axis=0) if big_h > 1 else np.zeros(height, dtype=int)
    cols = np.argmax(interpolation_matrix(width, big_w), axis=0) if big_w > 1 else np.zeros(width, dtype=int)
    return labels[..., rows[:, None], cols[None, :]]


def check_labels(labels, class_count):
    """类别编号必须落在 [0, class_count)"""
    if labels.size and (labels.min() < 0 or labels.max() >= class_count):
        raise LabelError(f"label ids must lie in [0, {class_count}), found range [{labels.min()}, {labels.max()}]")


def train_linear_readout(features, labels, cfg, rng):
    """
    训练单层1×1卷积读出头：softmax交叉熵，SGD动量，余弦衰减

    class_weighting 为 "balanced" 时类别权重取自全部训练目标，每个批次共用同一组权重

    Args:
        features (numpy.ndarray): N×C×h×w 冻结特征
        labels (numpy.ndarray): N×H×W 标签
        cfg (ReadoutConfig): 读出配置
        rng (numpy.random.Generator): 随机数生成器

    Returns:
        ReadoutHead: 训练好的读出头，loss_curve 为每轮平均损失
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if features.ndim != 4 or labels.ndim != 3 or len(features) != len(labels):
        raise DimensionError(f"features {features.shape} and labels {labels.shape} do not pair up")
    check_labels(labels, cfg.class_count)

    head = init_head(rng, features.shape[1], cfg.class_count, features)
    feat_h, feat_w = features.shape[-2:]
    if cfg.upsample_logits:
        targets, out_shape = labels, labels.shape[-2:]
    else:
        targets, out_shape = downsample_labels(labels, feat_h, feat_w), None
    standardized = head.standardize(features)
    if cfg.class_weighting == "balanced":
        class_weights = class_balance_weights(targets, cfg.class_count)
        logger.debug(f"readout class weights {np.round(class_weights, 3).tolist()}")
    else:
        class_weights = None

    batches_per_epoch = int(np.ceil(len(features) / cfg.batch_size))
    total = cfg.epochs * batches_per_epoch
    velocity_w = np.zeros_like(head.weight)
    velocity_b = np.zeros_like(head.bias)
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(features))
        epoch_loss = 0.0
        for start in range(0, len(order), cfg.batch_size):
            index = order[start:start + cfg.batch_size]
            logits, trace = conv2d_forward(standardized[index], head.spec, head.weight, head.bias)
            if out_shape is not None:
                loss, grad = softmax_cross_entropy(
                    upsample_bilinear(logits, *out_shape), targets[index], class_weights
                )
                grad = upsample_bilinear_adjoint(grad, feat_h, feat_w)
            else:
                loss, grad = softmax_cross_entropy(logits, targets[index], class_weights)
            grad_w, grad_b, _ = conv2d_backward(trace, grad)

            lr = cosine_lr(step, total, cfg.lr)
            velocity_w = cfg.momentum * velocity_w + grad_w
            velocity_b = cfg.momentum * velocity_b + grad_b
            head.weight = head.weight - lr * velocity_w
            head.bias = head.bias - lr * velocity_b
            epoch_loss += loss * len(index)
            step += 1
        head.loss_curve.append(epoch_loss / len(features))
        logger.debug(f"readout epoch {epoch} loss {head.loss_curve[-1]:.5f}")
    return head


def predict_labels(head, features, out_shape):
    """
    逐像素预测类别

    Args:
        head (ReadoutHead): 读出头
        features (numpy.ndarray): N×C×h×w 特征
        out_shape (tuple): 标签分辨率 (H, W)

    Returns:
        numpy.ndarray: N×H×W 预测标签
    """
    return np.argmax(head.logits(features, tuple(out_shape)), axis=1)
