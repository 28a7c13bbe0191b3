import os
import dataclasses

import numpy as np
import pytest
from scipy.ndimage import binary_erosion

from flowe.core.errors import ConfigError, DataSourceError
from flowe.geometry.flow import fb_consistency, pixel_grid
from flowe.geometry.sampling import bilinear_sample_grid
from flowe.synthvid.scene import ShapeSpec, SynthConfig, EgoMotion, CLASS_IDS, static_scene, random_scene
from flowe.synthvid.renderer import render_frame, render_packet, gt_flow, add_flow_noise, ego_step
from flowe.synthvid.dataset_manager import (
    DatasetManager, gen_dataset, split_episode_ids, episode_seed, MANIFEST_NAME
)
from flowe.trainer.data_sources import DatasetSource, SyntheticSource


def _moving_rectangle(velocity=(2.0, 0.0)):
    rect = ShapeSpec("rectangle", center=(10.0, 8.0), size=(3.0, 2.0), velocity=velocity)
    return dataclasses.replace(static_scene((16, 24), [rect]), supersample=1)


def _two_movers(rect_velocity, circle_velocity):
    """静止背景上的矩形和圆，各自匀速平移"""
    rect = ShapeSpec("rectangle", center=(14.0, 12.0), size=(5.0, 3.0), velocity=rect_velocity)
    circle = ShapeSpec("circle", center=(30.0, 18.0), size=(5.0, 5.0), velocity=circle_velocity)
    return dataclasses.replace(static_scene((32, 48), [rect, circle]), supersample=1)


def _region_interior(labels, iterations):
    """每个标签区域向内收缩后的并集"""
    interior = np.zeros(labels.shape, dtype=bool)
    for label in np.unique(labels):
        interior |= binary_erosion(labels == label, iterations=iterations)
    return interior


def _tree_bytes(root):
    files = {}
    for dirpath, _, names in os.walk(root):
        for name in names:
            path = os.path.join(dirpath, name)
            with open(path, "rb") as f:
                files[os.path.relpath(path, root)] = f.read()
    return files


class TestScene:
    def test_random_scene_is_seeded(self, small_synth):
        assert random_scene([1, 2], small_synth) == random_scene([1, 2], small_synth)
        assert random_scene([1, 2], small_synth) != random_scene([1, 3], small_synth)

    def test_invalid_config(self):
        with pytest.raises(ConfigError):
            SynthConfig(frames_per_episode=1)
        with pytest.raises(ConfigError):
            ShapeSpec("hexagon", center=(0, 0), size=(1, 1))


class TestRenderer:
    def test_frame_layout(self, small_synth):
        frame = render_frame(random_scene(0, small_synth), 0)
        assert frame.image.shape == (3, 16, 32)
        assert frame.labels.shape == (16, 32)
        assert frame.image.min() >= 0.0 and frame.image.max() <= 1.0
        assert frame.labels.min() >= 0 and frame.labels.max() < 4

    def test_labels_follow_shape(self):
        frame = render_frame(_moving_rectangle(), 0)
        assert frame.labels[8, 10] == CLASS_IDS["rectangle"]
        assert frame.labels[0, 0] == 0
        assert (frame.labels > 0).sum() == 7 * 5

    def test_nearer_shape_wins(self):
        far = ShapeSpec("rectangle", center=(8.0, 8.0), size=(4.0, 4.0))
        near = ShapeSpec("circle", center=(8.0, 8.0), size=(2.0, 2.0))
        frame = render_frame(static_scene((16, 16), [far, near]), 0)
        assert frame.labels[8, 8] == CLASS_IDS["circle"]
        assert frame.labels[8, 11] == CLASS_IDS["rectangle"]

    def test_static_scene_has_zero_flow(self):
        flow, occlusion = gt_flow(_moving_rectangle((0.0, 0.0)), 0)
        np.testing.assert_allclose(flow.u, 0.0, atol=1e-9)
        np.testing.assert_allclose(flow.v, 0.0, atol=1e-9)
        assert not occlusion.any()

    def test_ego_only_flow(self):
        spec = dataclasses.replace(
            static_scene((16, 24)), ego=EgoMotion(shift=(0.5, -0.25), rotation_deg=1.0, scale_rate=0.02)
        )
        flow, _ = gt_flow(spec, 0)
        xs, ys = pixel_grid((16, 24))
        dest_x, dest_y = ego_step(spec).apply(xs, ys)
        np.testing.assert_allclose(flow.u, dest_x - xs, atol=1e-9)
        np.testing.assert_allclose(flow.v, dest_y - ys, atol=1e-9)
        assert flow.valid[8, 12]

    def test_translation_flow_and_occlusion(self):
        spec = _moving_rectangle()
        flow, occlusion = gt_flow(spec, 0)
        labels = render_frame(spec, 0).labels
        np.testing.assert_allclose(flow.u[labels > 0], 2.0, atol=1e-9)
        np.testing.assert_allclose(flow.u[labels == 0], 0.0, atol=1e-9)
        # 矩形右侧即将被覆盖的背景
        assert occlusion[8, 14] and occlusion[8, 15]
        assert not occlusion[8, 5] and not occlusion[8, 10]
        assert not flow.valid[8, 14]

    def test_backward_flow_reverses_motion(self):
        spec = _moving_rectangle()
        backward, _ = gt_flow(spec, 0, direction="backward")
        labels_next = render_frame(spec, 1).labels
        np.testing.assert_allclose(backward.u[labels_next > 0], -2.0, atol=1e-9)

    def test_packet_matches_parts(self, small_synth):
        spec = random_scene(3, small_synth)
        packet = render_packet(spec, 1)
        np.testing.assert_array_equal(packet.image, render_frame(spec, 1).image)
        np.testing.assert_array_equal(packet.flow_to_next.u, gt_flow(spec, 1)[0].u)
        np.testing.assert_array_equal(packet.occlusion_next, ~packet.flow_to_next.valid)

    def test_flow_noise(self, rng):
        flow, _ = gt_flow(_moving_rectangle(), 0)
        noisy = add_flow_noise(flow, 1.0, rng)
        np.testing.assert_array_equal(noisy.valid, flow.valid)
        assert np.std(noisy.u - flow.u) == pytest.approx(1.0, rel=0.2)
        assert add_flow_noise(flow, 0.0, rng) is flow

    def test_fb_check_recovers_visible_pixels(self):
        cfg = SynthConfig(canvas=(32, 64), num_shapes=2, size_range=(5.0, 8.0), max_speed=1.0, supersample=1)
        for seed in range(3):
            packet = render_packet(random_scene(seed, cfg), 0)
            consistent = fb_consistency(packet.flow_to_next, packet.flow_from_next)
            visible = packet.flow_to_next.valid
            assert (consistent & visible).sum() / visible.sum() > 0.85

    def test_fb_check_flags_occlusions(self):
        packet = render_packet(_two_movers((2.5, 0.5), (-1.5, 1.25)), 0)
        occluded = packet.occlusion_next
        assert occluded.sum() > 20
        flagged = ~fb_consistency(packet.flow_to_next, packet.flow_from_next)
        assert (flagged & occluded).sum() / occluded.sum() >= 0.95

    def test_fb_check_keeps_interior_pixels(self):
        packet = render_packet(_two_movers((2.5, 0.5), (-1.5, 1.25)), 0)
        interior = _region_interior(packet.labels, 2) & packet.flow_to_next.valid
        assert interior.sum() > 500
        flagged = ~fb_consistency(packet.flow_to_next, packet.flow_from_next)
        assert (flagged & interior).sum() / interior.sum() < 0.05

    def test_labels_and_colors_move_with_flow(self):
        spec = _two_movers((3.0, 0.0), (-2.0, 2.0))
        packet = render_packet(spec, 0)
        following = render_frame(spec, 1)
        flow = packet.flow_to_next
        xs, ys = pixel_grid(spec.canvas)
        dest_x = np.rint(xs + flow.u).astype(int)[flow.valid]
        dest_y = np.rint(ys + flow.v).astype(int)[flow.valid]
        np.testing.assert_array_equal(following.labels[dest_y, dest_x], packet.labels[flow.valid])
        np.testing.assert_allclose(following.image[:, dest_y, dest_x], packet.image[:, flow.valid], atol=1e-12)

    def test_random_scene_constancy_along_flow(self):
        cfg = SynthConfig(canvas=(32, 64), num_shapes=2, size_range=(5.0, 8.0), max_speed=1.0, supersample=1)
        for seed in range(3):
            spec = random_scene(seed, cfg)
            packet = render_packet(spec, 0)
            following = render_frame(spec, 1)
            flow = packet.flow_to_next
            xs, ys = pixel_grid(cfg.canvas)
            dest_x, dest_y = xs + flow.u, ys + flow.v
            keep = flow.valid & _region_interior(packet.labels, 1)

            nearest_x = np.clip(np.rint(dest_x), 0, cfg.canvas[1] - 1).astype(int)
            nearest_y = np.clip(np.rint(dest_y), 0, cfg.canvas[0] - 1).astype(int)
            same = following.labels[nearest_y, nearest_x] == packet.labels
            assert same[keep].mean() >= 0.95

            warped, _ = bilinear_sample_grid(following.image, dest_x, dest_y)
            assert np.abs(warped - packet.image)[:, keep].mean() < 0.02


class TestDataset:
    def test_generation_is_deterministic(self, small_synth, tmp_path):
        a = str(tmp_path / "a")
        b = str(tmp_path / "b")
        gen_dataset(small_synth, 9, a, workers=1)
        gen_dataset(small_synth, 9, b, workers=3)
        assert _tree_bytes(a) == _tree_bytes(b)

    def test_manifest_contents(self, small_synth, tmp_path):
        root = str(tmp_path)
        assert gen_dataset(small_synth, 0, root) == os.path.join(root, MANIFEST_NAME)
        manager = DatasetManager(root).load()
        assert manager.episodes == [0, 1, 2, 3]
        assert len(manager.get_frames()) == 4 * 3
        assert len(manager.get_pairs()) == 4 * 2
        assert manager.get_gap(0, 0) == 1
        assert manager.synth_config() == small_synth

    def test_load_pair_matches_renderer(self, small_synth, tmp_path):
        root = str(tmp_path)
        gen_dataset(small_synth, 4, root)
        I1, I2, flow, flow_bwd = DatasetManager(root).load().load_pair(2, 1)
        packet = render_packet(random_scene(episode_seed(4, 2), small_synth), 1)
        assert I1.shape == I2.shape == (3, 16, 32)
        assert np.abs(I1 - packet.image).max() <= 0.5 / 255 + 1e-12
        np.testing.assert_array_equal(flow.valid, packet.flow_to_next.valid)
        np.testing.assert_allclose(flow.u, packet.flow_to_next.u, atol=1e-5)
        assert flow_bwd is not None

    def test_load_labelled(self, small_synth, tmp_path):
        root = str(tmp_path)
        gen_dataset(small_synth, 0, root)
        image, labels = DatasetManager(root).load().load_labelled(1, 2)
        np.testing.assert_array_equal(labels, render_frame(random_scene(episode_seed(0, 1), small_synth), 2).labels)
        assert image.shape == (3, 16, 32)

    def test_last_frame_has_no_flow(self, small_synth, tmp_path):
        root = str(tmp_path)
        gen_dataset(small_synth, 0, root)
        with pytest.raises(DataSourceError):
            DatasetManager(root).load().load_pair(0, 2)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DataSourceError):
            DatasetManager(str(tmp_path)).load()

    def test_dataset_source_matches_synthetic_source(self, small_synth, tmp_path):
        root = str(tmp_path)
        gen_dataset(small_synth, 6, root)
        disk = DatasetSource(root, seed=6, episodes=[1, 3])
        live = SyntheticSource(small_synth, seed=6, episodes=[1, 3])
        assert len(disk) == len(live) == 4
        rng = np.random.default_rng(0)
        for index in range(len(disk)):
            a, b = disk.load(index, rng), live.load(index, rng)
            assert np.abs(a.I2 - b.I2).max() <= 0.5 / 255 + 1e-12
            np.testing.assert_allclose(a.flow.v, b.flow.v, atol=1e-5)


class TestSplit:
    def test_last_episodes_are_held_out(self):
        assert split_episode_ids([3, 0, 1, 2], 0.25) == ([0, 1, 2], [3])
        assert split_episode_ids(range(10), 0.5) == ([0, 1, 2, 3, 4], [5, 6, 7, 8, 9])

    def test_at_least_one_each_side(self):
        assert split_episode_ids([0, 1], 0.0) == ([0], [1])
        assert split_episode_ids([0, 1, 2], 1.0) == ([0], [1, 2])

    def test_single_episode(self):
        assert split_episode_ids([4], 0.25) == ([4], [4])

    def test_manager_split_requires_episodes(self, tmp_path):
        with pytest.raises(DataSourceError):
            DatasetManager(str(tmp_path)).split_episodes(0.25)
