"""
日志配置
"""

import os
import logging


LOGGER_NAME = 'FlowE'
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def get_logger(name=None):
    """
    获取FlowE的子日志记录器

    Args:
        name (str): 子模块名，例如 'trainer'

    Returns:
        logging.Logger: 日志记录器
    """
    if name:
        return logging.getLogger(f"{LOGGER_NAME}.{name}")
    return logging.getLogger(LOGGER_NAME)


def configure_logging(out_dir=None, debug=False, log_name='flowe.log'):
    """
    配置日志记录，输出到控制台，并在给定输出目录时同时写入文件

    Args:
        out_dir (str): 输出目录，None表示只输出到控制台
        debug (bool): 是否启用调试级别
        log_name (str): 日志文件名

    Returns:
        logging.Logger: 根日志记录器
    """
    handlers = [logging.StreamHandler()]
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        handlers.append(logging.FileHandler(os.path.join(out_dir, log_name), 'a', 'utf-8'))

    logging.basicConfig(
        level=logging.DEBUG if debug else logging.INFO,
        format=LOG_FORMAT,
        handlers=handlers,
        force=True
    )
    return logging.getLogger(LOGGER_NAME)
