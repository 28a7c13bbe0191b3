import json
import os

import numpy as np
import pytest

from flowe.core.errors import ConfigError, DataSourceError, DimensionError, LabelError
from flowe.network.checkpoint import save_checkpoint_file
from flowe.network.gradcheck import numeric_gradient
from flowe.synthvid.dataset_manager import DatasetManager, gen_dataset
from flowe.synthvid.renderer import render_frame
from flowe.synthvid.scene import SynthConfig, random_scene
from flowe.readout.config import ReadoutConfig
from flowe.readout.metrics import ConfusionMatrix, eval_miou
from flowe.readout.linear_head import (
    softmax_cross_entropy, class_balance_weights, downsample_labels, train_linear_readout, predict_labels, check_labels,
    extract_features
)
from flowe.readout.evaluation import run_readout, load_encoder, RESULTS_NAME, OVERLAY_DIR


@pytest.fixture
def tiny_dataset(small_synth, tmp_path):
    root = str(tmp_path / "dataset")
    gen_dataset(small_synth, 0, root)
    return DatasetManager(root).load()


def _shape_frames(episodes=6, frames=2):
    """形状相对画布较大的合成帧"""
    cfg = SynthConfig(canvas=(32, 64), num_shapes=3, episodes=episodes, frames_per_episode=frames,
                      size_range=(5.0, 8.0), max_speed=1.0, supersample=1)
    packets = [render_frame(random_scene(episode, cfg), t) for episode in range(episodes) for t in range(frames)]
    return np.stack([p.image for p in packets]), np.stack([p.labels for p in packets])


class TestMetrics:
    def test_iou_per_class(self):
        result = eval_miou(np.array([0, 1, 1]), np.array([0, 1, 2]), 4)
        assert result.per_class_iou == [1.0, 0.5, 0.0, None]
        assert result.miou == pytest.approx(0.5)
        assert result.confusion.total == 3

    def test_partial_overlap(self):
        result = eval_miou(np.array([0, 1, 1, 1]), np.array([0, 0, 1, 1]), 2)
        assert result.per_class_iou == pytest.approx([0.5, 2.0 / 3.0])
        assert result.miou == pytest.approx(7.0 / 12.0)

    def test_disjoint_prediction(self):
        assert eval_miou(np.ones(5, dtype=int), np.zeros(5, dtype=int), 2).miou == 0.0

    def test_perfect_prediction(self, rng):
        labels = rng.integers(0, 3, (2, 5, 5))
        assert eval_miou(list(labels), list(labels), 3).miou == 1.0

    def test_relabeling_classes(self, rng):
        truth = rng.integers(0, 4, (3, 6, 6))
        pred = np.where(rng.random(truth.shape) < 0.7, truth, rng.integers(0, 4, truth.shape))
        perm = np.array([2, 0, 3, 1])
        assert eval_miou(perm[pred], perm[truth], 4).miou == pytest.approx(eval_miou(pred, truth, 4).miou)

    def test_fixing_a_pixel_never_hurts(self, rng):
        truth = rng.integers(0, 3, 40)
        pred = rng.integers(0, 3, 40)
        score = eval_miou(pred, truth, 3).miou
        for i in np.flatnonzero(pred != truth):
            pred[i] = truth[i]
            fixed = eval_miou(pred, truth, 3).miou
            assert fixed >= score - 1e-12
            score = fixed
        assert score == 1.0

    def test_to_dict(self):
        data = eval_miou(np.zeros((2, 2), dtype=int), np.zeros((2, 2), dtype=int), 2).to_dict()
        assert data["confusion"] == [[4, 0], [0, 0]]
        assert data["per_class_iou"] == [1.0, None]
        json.dumps(data)

    def test_out_of_range_labels(self):
        with pytest.raises(LabelError):
            ConfusionMatrix(3).update(np.array([0, 3]), np.array([0, 1]))
        with pytest.raises(LabelError):
            check_labels(np.array([-1]), 4)

    def test_merge(self):
        a = ConfusionMatrix(2).update(np.array([0]), np.array([1]))
        b = ConfusionMatrix(2).update(np.array([1]), np.array([1]))
        assert a.merge(b).counts.tolist() == [[0, 0], [1, 1]]
        with pytest.raises(DimensionError):
            a.merge(ConfusionMatrix(3))


class TestLinearHead:
    def test_uniform_logits_loss(self):
        loss, _ = softmax_cross_entropy(np.zeros((1, 4, 2, 2)), np.zeros((1, 2, 2), dtype=int))
        assert loss == pytest.approx(np.log(4.0))

    def test_cross_entropy_gradient(self, rng):
        logits = rng.standard_normal((2, 3, 2, 2))
        labels = rng.integers(0, 3, (2, 2, 2))
        _, grad = softmax_cross_entropy(logits, labels)
        numeric = numeric_gradient(lambda: softmax_cross_entropy(logits, labels)[0], logits)
        np.testing.assert_allclose(grad, numeric, atol=1e-8)

    def test_extract_features_is_chunk_independent(self, params, rng):
        images = rng.uniform(0, 1, (5, 3, 16, 16))
        whole = extract_features(params, images, batch_size=5)
        assert whole.shape == (5, 64, 2, 2)
        np.testing.assert_allclose(extract_features(params, images, batch_size=2, workers=2), whole, atol=1e-12)
        with pytest.raises(DimensionError):
            extract_features(params, images[0])

    def test_downsample_labels_aligns_corners(self):
        labels = np.arange(81).reshape(9, 9)
        np.testing.assert_array_equal(downsample_labels(labels, 3, 3), labels[[0, 4, 8]][:, [0, 4, 8]])

    def test_separable_features(self, rng):
        signs = rng.choice([-1.0, 1.0], size=(6, 4, 4))
        features = np.stack([signs, 0.01 * rng.standard_normal((6, 4, 4))], axis=1)
        labels = (signs > 0).astype(np.int64)
        cfg = ReadoutConfig(epochs=40, lr=0.5, batch_size=3, class_count=2, upsample_logits=False)
        head = train_linear_readout(features, labels, cfg, rng)
        assert head.loss_curve[-1] < head.loss_curve[0]
        np.testing.assert_array_equal(predict_labels(head, features, (4, 4)), labels)

    def test_weighted_cross_entropy_gradient(self, rng):
        logits = rng.standard_normal((2, 3, 2, 2))
        labels = rng.integers(0, 3, (2, 2, 2))
        weights = np.array([0.2, 1.0, 3.0])
        _, grad = softmax_cross_entropy(logits, labels, weights)
        numeric = numeric_gradient(lambda: softmax_cross_entropy(logits, labels, weights)[0], logits)
        np.testing.assert_allclose(grad, numeric, atol=1e-8)
        plain, _ = softmax_cross_entropy(logits, labels)
        assert softmax_cross_entropy(logits, labels, np.full(3, 2.0))[0] == pytest.approx(plain)

    def test_balance_weights(self):
        weights = class_balance_weights(np.array([0, 0, 0, 1]), 3)
        np.testing.assert_allclose(weights, [2.0 / 3.0, 2.0, 0.0])
        assert float(np.mean(weights[np.array([0, 0, 0, 1])])) == pytest.approx(1.0)

    def test_random_encoder_finds_foreground(self, params):
        images, labels = _shape_frames()
        assert 0.03 < np.mean(labels > 0) < 0.5
        features = extract_features(params, images)
        predictions = {}
        for weighting in ("balanced", "none"):
            cfg = ReadoutConfig(epochs=60, batch_size=4, class_weighting=weighting)
            head = train_linear_readout(features, labels, cfg, np.random.default_rng(0))
            predictions[weighting] = predict_labels(head, features, labels.shape[-2:])
        balanced = predictions["balanced"]
        assert len(np.unique(balanced)) >= 2
        per_class = eval_miou(list(balanced), list(labels), 4).per_class_iou
        assert max(iou for iou in per_class[1:] if iou is not None) > 0.05
        assert (balanced > 0).sum() > (predictions["none"] > 0).sum()

    def test_feature_label_mismatch(self, rng):
        with pytest.raises(DimensionError):
            train_linear_readout(np.zeros((2, 3, 4, 4)), np.zeros((3, 4, 4), dtype=int), ReadoutConfig(), rng)

    def test_labels_outside_classes(self, rng):
        with pytest.raises(LabelError):
            train_linear_readout(np.zeros((1, 3, 2, 2)), np.full((1, 2, 2), 7), ReadoutConfig(), rng)


class TestReadout:
    def test_config_validation(self):
        with pytest.raises(ConfigError):
            ReadoutConfig(class_count=1)
        with pytest.raises(ConfigError):
            ReadoutConfig(eval_fraction=1.0)
        with pytest.raises(ConfigError):
            ReadoutConfig(class_weighting="median")

    def test_random_encoder_run(self, tiny_dataset, tmp_path):
        out_dir = str(tmp_path / "readout")
        cfg = ReadoutConfig(epochs=2, batch_size=4, overlays=2)
        results = run_readout(cfg, tiny_dataset, seed=1, out_dir=out_dir)
        assert results["train_frames"] == 9 and results["eval_frames"] == 3
        assert 0.0 <= results["miou"] <= 1.0
        assert len(results["loss_curve"]) == 2
        assert results["pixels"] == 3 * 16 * 32
        with open(os.path.join(out_dir, RESULTS_NAME), encoding="utf-8") as f:
            assert json.load(f)["miou"] == results["miou"]
        assert len(os.listdir(os.path.join(out_dir, OVERLAY_DIR))) == 2

    def test_same_seed_same_result(self, tiny_dataset):
        cfg = ReadoutConfig(epochs=1, batch_size=4)
        assert run_readout(cfg, tiny_dataset, seed=2)["miou"] == run_readout(cfg, tiny_dataset, seed=2)["miou"]

    def test_checkpoint_encoder(self, tiny_dataset, params, tmp_path):
        path = str(tmp_path / "enc.flwe")
        save_checkpoint_file(path, params, step=5)
        cfg = ReadoutConfig(epochs=1, batch_size=4, encoder_checkpoint=path, overlays=0)
        results = run_readout(cfg, tiny_dataset)
        assert results["encoder_digest"] == params.digest("encoder")

    def test_missing_checkpoint(self, tmp_path):
        with pytest.raises(DataSourceError):
            load_encoder(ReadoutConfig(encoder_checkpoint=str(tmp_path / "nope.flwe")), 0)
