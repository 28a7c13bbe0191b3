"""
核心模块，提供错误类型、配置、日志与系统基类
"""

__version__ = '0.1.0'
