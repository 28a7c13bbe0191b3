"""
配置辅助函数，在数据类与JSON字典之间转换并应用点路径覆盖
"""

import json
import dataclasses

from flowe.core.errors import ConfigError


def config_to_dict(config):
    """
    将配置数据类转换为可JSON序列化的字典

    Args:
        config: 数据类实例

    Returns:
        dict: 嵌套字典，元组转换为列表
    """
    def _convert(value):
        if dataclasses.is_dataclass(value):
            return {f.name: _convert(getattr(value, f.name)) for f in dataclasses.fields(value)}
        if isinstance(value, (list, tuple)):
            return [_convert(v) for v in value]
        if isinstance(value, dict):
            return {k: _convert(v) for k, v in value.items()}
        return value

    return _convert(config)


def _coerce(current, value, path):
    """按照当前默认值的类型转换新值"""
    if dataclasses.is_dataclass(current):
        if not isinstance(value, dict):
            raise ConfigError(f"config section '{path}' expects an object")
        return merge_config(current, value, path)
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"config key '{path}' expects a boolean, got {value!r}")
        return value
    if isinstance(current, int) and not isinstance(current, bool):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"config key '{path}' expects an integer, got {value!r}")
        return int(value)
    if isinstance(current, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config key '{path}' expects a number, got {value!r}")
        return float(value)
    if isinstance(current, tuple):
        if not isinstance(value, (list, tuple)) or len(value) != len(current):
            raise ConfigError(f"config key '{path}' expects a list of {len(current)} values")
        return tuple(_coerce(c, v, f"{path}[{i}]") for i, (c, v) in enumerate(zip(current, value)))
    if isinstance(current, list):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"config key '{path}' expects a list")
        return list(value)
    if isinstance(current, str) and isinstance(value, (int, float)) and not isinstance(value, bool):
        return str(value)
    if current is None or isinstance(current, str):
        if value is not None and not isinstance(value, (str, int, float)):
            raise ConfigError(f"config key '{path}' expects a scalar, got {value!r}")
        return value
    return value


def merge_config(config, data, prefix=""):
    """
    将字典合并到配置数据类上，返回新的实例

    Args:
        config: 数据类实例，提供默认值
        data (dict): 要合并的字典
        prefix (str): 错误信息中的路径前缀

    Returns:
        新的数据类实例
    """
    names = {f.name for f in dataclasses.fields(config)}
    updates = {}
    for key, value in data.items():
        path = f"{prefix}.{key}" if prefix else key
        if key not in names:
            raise ConfigError(f"unknown config key '{path}'")
        updates[key] = _coerce(getattr(config, key), value, path)
    merged = dataclasses.replace(config, **updates)
    validate = getattr(merged, "validate", None)
    if validate is not None:
        validate()
    return merged


def parse_override(text):
    """
    解析一个 key.path=value 形式的覆盖项

    Args:
        text (str): 覆盖文本，允许以 -- 开头

    Returns:
        tuple: (路径列表, 值)
    """
    text = text[2:] if text.startswith("--") else text
    if "=" not in text:
        raise ConfigError(f"override '{text}' must have the form key.path=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.split("."), value


def apply_overrides(config, overrides):
    """
    应用点路径覆盖

    Args:
        config: 数据类实例
        overrides (list): 覆盖文本列表，例如 ["trainer.base_lr=0.05"]

    Returns:
        新的数据类实例
    """
    for text in overrides:
        keys, value = parse_override(text)
        nested = value
        for key in reversed(keys):
            nested = {key: nested}
        config = merge_config(config, nested)
    return config


def load_json(path):
    """读取JSON文件"""
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config file {path}: {e}")
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must contain a JSON object")
    return data


def save_json(path, data):
    """写入带缩进的JSON文件"""
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=4, sort_keys=False)
