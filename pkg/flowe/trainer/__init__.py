"""
训练模块，流等变目标、EMA目标网络与优化器
"""
