"""
工作线程辅助函数，结果始终按输入顺序返回
"""

import os
from concurrent.futures import ThreadPoolExecutor


THREADS_ENV = 'FLOWE_THREADS'


def worker_count(default=1):
    """
    读取 FLOWE_THREADS 环境变量得到工作线程上限

    Args:
        default (int): 未设置时的默认值

    Returns:
        int: 工作线程数，至少为1
    """
    value = os.environ.get(THREADS_ENV)
    if not value:
        return default
    try:
        return max(1, int(value))
    except ValueError:
        return default


def ordered_map(func, items, workers=None):
    """
    并行执行并按输入顺序收集结果

    Args:
        func: 单参数函数
        items (list): 输入列表
        workers (int): 线程数，None表示读取环境变量

    Returns:
        list: 与输入顺序一致的结果列表
    """
    items = list(items)
    workers = worker_count() if workers is None else max(1, workers)
    if workers == 1 or len(items) <= 1:
        return [func(item) for item in items]

    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))
