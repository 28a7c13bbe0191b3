"""
错误类型，所有FlowE异常都继承自FlowEError
"""


class FlowEError(Exception):
    """FlowE异常基类"""


class ConfigError(FlowEError):
    """配置错误，例如未知的配置键或无法满足的裁剪尺寸"""


class DimensionError(FlowEError):
    """维度错误，张量形状不匹配或尺寸不可整除"""


class DegeneracyError(FlowEError):
    """退化错误，仿射矩阵不可逆"""


class FlowFormatError(FlowEError):
    """光流文件格式错误"""

    def __init__(self, message, offset=0):
        """
        初始化光流格式错误

        Args:
            message (str): 错误信息
            offset (int): 出错位置的字节偏移
        """
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class CheckpointError(FlowEError):
    """检查点错误基类"""


class CheckpointHashError(CheckpointError):
    """检查点结构哈希不一致"""


class CheckpointVersionError(CheckpointError):
    """检查点版本不受支持"""


class CheckpointTruncatedError(CheckpointError):
    """检查点文件被截断"""

    def __init__(self, message, offset=0):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class ArchMismatchError(FlowEError):
    """网络结构不匹配"""


class NonFiniteGradientError(FlowEError):
    """梯度中出现非有限值"""

    def __init__(self, name):
        """
        初始化非有限梯度错误

        Args:
            name (str): 出现问题的参数名称
        """
        super().__init__(f"non-finite gradient in parameter '{name}'")
        self.name = name


class TraceError(FlowEError):
    """前向轨迹缺失或与反向传播不匹配"""


class LabelError(FlowEError):
    """标签数据错误，类别编号越界"""


class DataSourceError(FlowEError):
    """数据源错误，带有路径和训练步上下文"""

    def __init__(self, message, path=None, step=None):
        context = []
        if path is not None:
            context.append(f"path={path}")
        if step is not None:
            context.append(f"step={step}")
        suffix = f" [{', '.join(context)}]" if context else ""
        super().__init__(f"{message}{suffix}")
        self.path = path
        self.step = step
