"""
数据增强模块，构造两个增强视图
"""
