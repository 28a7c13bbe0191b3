"""
网络模块，全卷积编码器、投影头与预测头
"""
