"""
合成视频模块，生成带真实光流与标签的视频帧
"""
