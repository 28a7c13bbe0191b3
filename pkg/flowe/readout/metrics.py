"""
分割评估：混淆矩阵与 mIoU
"""

from dataclasses import dataclass

import numpy as np

from flowe.core.errors import DimensionError, LabelError


class ConfusionMatrix:
    """混淆矩阵，行为真实类别，列为预测类别"""

    def __init__(self, class_count):
        self.class_count = class_count
        self.counts = np.zeros((class_count, class_count), dtype=np.int64)

    @property
    def total(self):
        """已统计的像素数"""
        return int(self.counts.sum())

    def update(self, pred, truth):
        """
        累加一组预测

        Args:
            pred (numpy.ndarray): 预测标签
            truth (numpy.ndarray): 真实标签
        """
        pred = np.asarray(pred)
        truth = np.asarray(truth)
        if pred.shape != truth.shape:
            raise DimensionError(f"prediction {pred.shape} and truth {truth.shape} differ")
        for name, labels in (("prediction", pred), ("truth", truth)):
            if labels.size and (labels.min() < 0 or labels.max() >= self.class_count):
                raise LabelError(f"{name} has class ids outside [0, {self.class_count})")
        index = truth.reshape(-1).astype(np.int64) * self.class_count + pred.reshape(-1).astype(np.int64)
        self.counts += np.bincount(index, minlength=self.class_count ** 2).reshape(self.class_count, -1)
        return self

    def merge(self, other):
        """合并另一个混淆矩阵"""
        if other.class_count != self.class_count:
            raise DimensionError("cannot merge confusion matrices with different class counts")
        self.counts += other.counts
        return self

    def iou(self):
        """
        逐类IoU，真实和预测中都不存在的类别为 None

        Returns:
            list: 每类的 IoU 或 None
        """
        tp = np.diag(self.counts)
        fp = self.counts.sum(axis=0) - tp
        fn = self.counts.sum(axis=1) - tp
        union = tp + fp + fn
        return [float(tp[c]) / float(union[c]) if union[c] > 0 else None for c in range(self.class_count)]


@dataclass
class MiouResult:
    """mIoU评估结果"""

    per_class_iou: list
    miou: float
    confusion: ConfusionMatrix

    def to_dict(self):
        """可JSON序列化的字典"""
        return {
            "miou": self.miou,
            "per_class_iou": self.per_class_iou,
            "confusion": self.confusion.counts.tolist(),
            "pixels": self.confusion.total
        }


def eval_miou(pred_labels, true_labels, class_count):
    """
    计算逐类IoU与mIoU

    Args:
        pred_labels: 预测标签数组或数组列表
        true_labels: 真实标签数组或数组列表
        class_count (int): 类别数

    Returns:
        MiouResult: 结果
    """
    confusion = ConfusionMatrix(class_count)
    if isinstance(pred_labels, (list, tuple)):
        if len(pred_labels) != len(true_labels):
            raise DimensionError("prediction and truth lists differ in length")
        for pred, truth in zip(pred_labels, true_labels):
            confusion.update(pred, truth)
    else:
        confusion.update(pred_labels, true_labels)
    ious = confusion.iou()
    included = [value for value in ious if value is not None]
    miou = float(np.mean(included)) if included else 0.0
    return MiouResult(ious, miou, confusion)
