"""
合成数据集的生成与管理
"""

import os
import json
import dataclasses

import numpy as np

from flowe.core.config import config_to_dict, save_json, load_json
from flowe.core.errors import DataSourceError, ConfigError
from flowe.core.logging_setup import get_logger
from flowe.core.workers import ordered_map
from flowe.geometry.flo_io import flo_read_file, flo_write_file
from flowe.geometry.image_io import (
    load_image, save_image, load_label_map, save_label_map, load_mask, save_mask
)
from flowe.synthvid.scene import random_scene, SynthConfig
from flowe.synthvid.renderer import render_packet, render_frame


logger = get_logger('synthvid')

MANIFEST_NAME = "manifest.jsonl"
DATASET_INFO_NAME = "dataset.json"


def episode_seed(seed, episode):
    """片段的种子序列"""
    return [int(seed), int(episode)]


def split_episode_ids(episodes, eval_fraction):
    """
    按片段划分训练集与评估集，评估集取最后的若干片段；只有一个片段时两者相同

    Returns:
        tuple: (训练片段列表, 评估片段列表)
    """
    episodes = sorted(episodes)
    count = len(episodes)
    if count <= 1:
        return list(episodes), list(episodes)
    n_eval = min(count - 1, max(1, int(round(count * eval_fraction))))
    return episodes[:count - n_eval], episodes[count - n_eval:]


def _write_episode(args):
    """生成并写出一个片段，返回该片段的清单条目"""
    cfg, seed, episode, out_dir = args
    scene_seed = episode_seed(seed, episode)
    # 磁盘上的光流保持解析值，噪声在读取时加入
    spec = random_scene(scene_seed, dataclasses.replace(cfg, noise_sigma_flow=0.0))
    rel_dir = f"episode_{episode:04d}"
    os.makedirs(os.path.join(out_dir, rel_dir), exist_ok=True)

    entries = []
    last_flow_frame = cfg.frames_per_episode - 1 - cfg.frame_gap
    for t in range(cfg.frames_per_episode):
        entry = {
            "episode": episode,
            "frame": t,
            "seed": scene_seed,
            "gap": cfg.frame_gap,
            "image": f"{rel_dir}/frame_{t:04d}.png",
            "labels": f"{rel_dir}/labels_{t:04d}.png",
        }
        if t <= last_flow_frame:
            packet = render_packet(spec, t, cfg.frame_gap)
            entry.update({
                "flow": f"{rel_dir}/flow_{t:04d}.flo",
                "flow_bwd": f"{rel_dir}/flow_bwd_{t:04d}.flo",
                "occlusion": f"{rel_dir}/occlusion_{t:04d}.png",
            })
            flo_write_file(os.path.join(out_dir, entry["flow"]), packet.flow_to_next)
            flo_write_file(os.path.join(out_dir, entry["flow_bwd"]), packet.flow_from_next)
            save_mask(os.path.join(out_dir, entry["occlusion"]), packet.occlusion_next)
        else:
            packet = render_frame(spec, t)
        save_image(os.path.join(out_dir, entry["image"]), packet.image)
        save_label_map(os.path.join(out_dir, entry["labels"]), packet.labels)
        entries.append(entry)
    return entries


def gen_dataset(cfg, seed, out_dir, workers=None):
    """
    生成合成数据集：PNG帧、标签图、遮挡掩码、.flo光流与 JSON-lines 清单

    Args:
        cfg (SynthConfig): 合成数据配置
        seed (int): 全局种子
        out_dir (str): 输出目录
        workers (int): 并行片段数，None 表示读取 FLOWE_THREADS

    Returns:
        str: 清单文件路径
    """
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as e:
        raise DataSourceError(f"cannot create dataset directory: {e}", path=out_dir)

    jobs = [(cfg, seed, episode, out_dir) for episode in range(cfg.episodes)]
    episodes = ordered_map(_write_episode, jobs, workers)

    manifest_path = os.path.join(out_dir, MANIFEST_NAME)
    try:
        with open(manifest_path, "w", encoding="utf-8") as f:
            for entries in episodes:
                for entry in entries:
                    f.write(json.dumps(entry, sort_keys=True) + "\n")
        save_json(os.path.join(out_dir, DATASET_INFO_NAME), {"seed": seed, "synthvid": config_to_dict(cfg)})
    except OSError as e:
        raise DataSourceError(f"cannot write manifest: {e}", path=manifest_path)

    logger.info(f"Dataset written: {cfg.episodes} episodes x {cfg.frames_per_episode} frames -> {out_dir}")
    return manifest_path


class DatasetManager:
    """数据集管理器，按片段和帧索引清单并读取帧对"""

    def __init__(self, root):
        """
        初始化数据集管理器

        Args:
            root (str): 数据集目录
        """
        self.root = root
        self.entries = {}  # (episode, frame) → 清单条目
        self.episodes = []  # 片段编号列表
        self.info = None  # 生成时的配置
        self.loaded = False

    def load(self):
        """
        读取清单

        Returns:
            DatasetManager: self
        """
        manifest_path = os.path.join(self.root, MANIFEST_NAME)
        if not os.path.isfile(manifest_path):
            raise DataSourceError("dataset manifest not found", path=manifest_path)
        try:
            with open(manifest_path, "r", encoding="utf-8") as f:
                for line in f:
                    if not line.strip():
                        continue
                    entry = json.loads(line)
                    self.entries[(entry["episode"], entry["frame"])] = entry
        except (OSError, ValueError, KeyError) as e:
            raise DataSourceError(f"cannot parse manifest: {e}", path=manifest_path)

        info_path = os.path.join(self.root, DATASET_INFO_NAME)
        if os.path.isfile(info_path):
            try:
                self.info = load_json(info_path)
            except ConfigError as e:
                raise DataSourceError(str(e), path=info_path)

        self.episodes = sorted({episode for episode, _ in self.entries})
        self.loaded = True
        logger.info(f"Dataset loaded: {len(self.episodes)} episodes, {len(self.entries)} frames from {self.root}")
        return self

    def _path(self, entry, key):
        return os.path.join(self.root, entry[key])

    def get_entry(self, episode, frame):
        """
        获取清单条目

        Returns:
            dict: 清单条目
        """
        entry = self.entries.get((episode, frame))
        if entry is None:
            raise DataSourceError(f"no frame {frame} in episode {episode}", path=self.root)
        return entry

    def get_frames(self, episodes=None):
        """列出 (episode, frame)，可限定片段"""
        wanted = None if episodes is None else set(episodes)
        return sorted(key for key in self.entries if wanted is None or key[0] in wanted)

    def get_pairs(self, episodes=None):
        """列出带光流的 (episode, frame)"""
        return [key for key in self.get_frames(episodes) if "flow" in self.entries[key]]

    def get_gap(self, episode, frame):
        """帧间隔"""
        return int(self.get_entry(episode, frame).get("gap", 1))

    def load_pair(self, episode, frame, dtype=np.float64):
        """
        读取帧对与光流

        Returns:
            tuple: (I1, I2, 前向光流, 后向光流)
        """
        entry = self.get_entry(episode, frame)
        if "flow" not in entry:
            raise DataSourceError(f"frame {frame} of episode {episode} has no flow", path=self.root)
        second = self.get_entry(episode, frame + int(entry.get("gap", 1)))
        I1 = load_image(self._path(entry, "image"), dtype)
        I2 = load_image(self._path(second, "image"), dtype)
        flow = flo_read_file(self._path(entry, "flow"))
        flow_bwd = flo_read_file(self._path(entry, "flow_bwd")) if "flow_bwd" in entry else None
        if "occlusion" in entry:
            flow = flow.with_valid(~load_mask(self._path(entry, "occlusion")))
        return I1, I2, flow, flow_bwd

    def load_labelled(self, episode, frame, dtype=np.float64):
        """
        读取带标签的帧

        Returns:
            tuple: (image, labels)
        """
        entry = self.get_entry(episode, frame)
        return load_image(self._path(entry, "image"), dtype), load_label_map(self._path(entry, "labels"))

    def split_episodes(self, eval_fraction):
        """
        按片段划分训练集与评估集，评估集取最后的若干片段

        Returns:
            tuple: (训练片段列表, 评估片段列表)
        """
        if not self.episodes:
            raise DataSourceError("dataset has no episodes", path=self.root)
        return split_episode_ids(self.episodes, eval_fraction)

    def synth_config(self):
        """生成时使用的合成数据配置"""
        if not self.info:
            return None
        data = dict(self.info.get("synthvid", {}))
        for key, value in data.items():
            if isinstance(value, list):
                data[key] = tuple(value)
        return SynthConfig(**data)
