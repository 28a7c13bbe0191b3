"""
训练数据源，每个批次都只由 (种子, 步数) 决定
"""

import os
import glob
from dataclasses import dataclass

import numpy as np

from flowe.core.errors import DataSourceError, FlowEError
from flowe.core.logging_setup import get_logger
from flowe.core.workers import ordered_map
from flowe.geometry.flo_io import flo_read_file
from flowe.geometry.flow import FlowField
from flowe.geometry.image_io import load_image
from flowe.synthvid.scene import random_scene, SynthConfig
from flowe.synthvid.renderer import render_frame, render_packet, add_flow_noise
from flowe.synthvid.dataset_manager import DatasetManager, MANIFEST_NAME, episode_seed


logger = get_logger('trainer.data')


@dataclass(frozen=True, eq=False)
class PairSample:
    """一个训练样本：两帧与它们之间的光流"""

    I1: np.ndarray
    I2: np.ndarray
    flow: FlowField
    flow_bwd: FlowField = None


class DataSource:
    """数据源基类"""

    def __init__(self, seed=0, workers=None):
        self.seed = seed
        self.workers = workers

    def __len__(self):
        return 0

    def load(self, index, rng):
        """读取第 index 个样本"""
        raise NotImplementedError

    def batch(self, step, batch_size):
        """
        取一个批次

        Args:
            step (int): 训练步
            batch_size (int): 批大小

        Returns:
            list: PairSample 列表
        """
        rng = np.random.default_rng([self.seed, step, 7])
        indices = rng.integers(0, len(self), size=batch_size)
        seeds = rng.integers(0, 2 ** 31 - 1, size=batch_size)

        def _load(item):
            index, sample_seed = item
            try:
                return self.load(int(index), np.random.default_rng(int(sample_seed)))
            except DataSourceError as e:
                raise DataSourceError(str(e), step=step) from e
            except (OSError, FlowEError) as e:
                raise DataSourceError(f"cannot load sample {index}: {e}", step=step) from e

        return ordered_map(_load, list(zip(indices, seeds)), self.workers)

    def describe(self):
        """简短描述"""
        return f"{self.__class__.__name__}({len(self)} samples)"


class SyntheticSource(DataSource):
    """即时渲染的合成数据源"""

    def __init__(self, cfg=None, seed=0, episodes=None, workers=None):
        """
        初始化合成数据源

        Args:
            cfg (SynthConfig): 合成数据配置
            seed (int): 种子
            episodes (list): 只使用这些片段，None 表示全部
            workers (int): 并行数
        """
        super().__init__(seed, workers)
        self.cfg = SynthConfig() if cfg is None else cfg
        self.episode_ids = list(range(self.cfg.episodes)) if episodes is None else sorted(episodes)
        self.pairs_per_episode = self.cfg.frames_per_episode - self.cfg.frame_gap
        self._scenes = {}
        if not self.episode_ids or self.pairs_per_episode <= 0:
            raise DataSourceError("synthetic source has no frame pairs")

    def __len__(self):
        return len(self.episode_ids) * self.pairs_per_episode

    def scene(self, episode):
        """片段的场景（缓存），与生成数据集中同编号的片段相同"""
        if episode not in self._scenes:
            self._scenes[episode] = random_scene(episode_seed(self.seed, episode), self.cfg)
        return self._scenes[episode]

    def load(self, index, rng):
        slot, t = divmod(index, self.pairs_per_episode)
        spec = self.scene(self.episode_ids[slot])
        packet = render_packet(spec, t, self.cfg.frame_gap, rng)
        second = render_frame(spec, t + self.cfg.frame_gap)
        return PairSample(packet.image, second.image, packet.flow_to_next, packet.flow_from_next)


class DatasetSource(DataSource):
    """从磁盘上的生成数据集读取"""

    def __init__(self, root, seed=0, episodes=None, flow_noise_sigma=0.0, workers=None):
        """
        初始化数据集数据源

        Args:
            root (str): 数据集目录
            seed (int): 种子
            episodes (list): 只使用这些片段，None 表示全部
            flow_noise_sigma (float): 读取时额外加入的光流噪声
            workers (int): 并行数
        """
        super().__init__(seed, workers)
        self.manager = DatasetManager(root).load()
        self.keys = self.manager.get_pairs(episodes)
        self.flow_noise_sigma = flow_noise_sigma
        if not self.keys:
            raise DataSourceError("dataset contains no frame pairs with flow", path=root)

    def __len__(self):
        return len(self.keys)

    def load(self, index, rng):
        episode, frame = self.keys[index]
        I1, I2, flow, flow_bwd = self.manager.load_pair(episode, frame)
        if self.flow_noise_sigma > 0:
            flow = add_flow_noise(flow, self.flow_noise_sigma, rng)
            if flow_bwd is not None:
                flow_bwd = add_flow_noise(flow_bwd, self.flow_noise_sigma, rng)
        return PairSample(I1, I2, flow, flow_bwd)


class ExternalPairSource(DataSource):
    """
    外部帧对目录：<name>_img1.png、<name>_img2.png、<name>_flow.flo，
    以及可选的 <name>_flow_bwd.flo
    """

    def __init__(self, root, seed=0, workers=None):
        super().__init__(seed, workers)
        self.root = root
        if not os.path.isdir(root):
            raise DataSourceError("external pair directory not found", path=root)
        self.names = sorted(
            os.path.basename(path)[:-len("_img1.png")]
            for path in glob.glob(os.path.join(root, "*_img1.png"))
        )
        if not self.names:
            raise DataSourceError("no *_img1.png files found", path=root)

    def __len__(self):
        return len(self.names)

    def _file(self, name, suffix):
        return os.path.join(self.root, f"{name}_{suffix}")

    def load(self, index, rng):
        name = self.names[index]
        for suffix in ("img2.png", "flow.flo"):
            if not os.path.isfile(self._file(name, suffix)):
                raise DataSourceError(f"missing companion file {name}_{suffix}", path=self.root)
        I1 = load_image(self._file(name, "img1.png"))
        I2 = load_image(self._file(name, "img2.png"))
        flow = flo_read_file(self._file(name, "flow.flo"))
        bwd_path = self._file(name, "flow_bwd.flo")
        flow_bwd = flo_read_file(bwd_path) if os.path.isfile(bwd_path) else None
        return PairSample(I1, I2, flow, flow_bwd)


def open_source(path=None, synth_cfg=None, seed=0, episodes=None, flow_noise_sigma=0.0):
    """
    根据路径选择数据源：None 为即时合成；含清单的目录为生成数据集；否则为外部帧对目录
    """
    if path is None:
        source = SyntheticSource(synth_cfg, seed, episodes)
    elif os.path.isfile(os.path.join(path, MANIFEST_NAME)):
        source = DatasetSource(path, seed, episodes, flow_noise_sigma)
    else:
        source = ExternalPairSource(path, seed)
    logger.info(f"Data source: {source.describe()}")
    return source
