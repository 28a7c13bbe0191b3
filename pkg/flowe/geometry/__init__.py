"""
几何模块，提供双线性采样、仿射与光流代数以及特征变形
"""
