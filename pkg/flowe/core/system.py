"""
系统基类，训练和读出等长流程都继承自此类
"""


class System:
    """系统基类，训练和读出等长流程都继承自此类"""

    def __init__(self):
        """初始化系统"""
        self.initialized = False  # 是否已初始化

    def initialize(self):
        """初始化系统，在运行开始前调用"""
        self.initialized = True

    def update(self, step):
        """
        推进系统一步

        Args:
            step (int): 当前步数
        """
        pass

    def shutdown(self):
        """关闭系统，释放文件句柄等资源"""
        self.initialized = False
