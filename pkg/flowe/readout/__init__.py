"""
读出评估模块，冻结编码器上的线性分割头
"""
