import struct

import numpy as np
import pytest

from flowe.core.errors import DegeneracyError, DimensionError, FlowFormatError
from flowe.geometry.affine import AffineMap, affine_identity, affine_from_params
from flowe.geometry.flow import FlowField, DenseCorrespondence, pixel_grid, fb_consistency, flow_stats, \
    flow_endpoint_error
from flowe.geometry.sampling import (
    bilinear_sample, bilinear_sample_grid, warp_features, upsample_bilinear, upsample_bilinear_adjoint,
    channel_normalize, channel_normalize_backward, sample_plane_validity
)
from flowe.geometry.transform import compose_transform, affine_correspondence
from flowe.geometry.flo_io import flo_read, flo_write, flo_read_file, flo_write_file
from flowe.geometry.image_io import save_image, load_image, save_label_map, load_label_map


class TestAffine:
    def test_inverse_round_trip(self, rng):
        for _ in range(20):
            A = affine_from_params(rng.uniform(0.5, 2.0), rng.uniform(-180, 180), *rng.uniform(-10, 10, 2))
            x, y = rng.uniform(0, 50, 2)
            rx, ry = A.inverse().apply(*A.apply(x, y))
            assert abs(rx - x) < 1e-9 and abs(ry - y) < 1e-9

    def test_compose_applies_right_operand_first(self):
        shift = AffineMap((1, 0, 5, 0, 1, 0))
        double = affine_from_params(scale=2.0)
        assert double.compose(shift).apply(1.0, 1.0) == (12.0, 2.0)
        assert shift.compose(double).apply(1.0, 1.0) == (7.0, 2.0)

    def test_compose_is_associative(self, rng):
        A, B, C = (affine_from_params(rng.uniform(0.5, 2.0), rng.uniform(-180, 180), *rng.uniform(-10, 10, 2))
                   for _ in range(3))
        np.testing.assert_allclose(A.compose(B).compose(C).matrix, A.compose(B.compose(C)).matrix, atol=1e-9)

    def test_singular_map_rejected(self):
        with pytest.raises(DegeneracyError):
            AffineMap((1, 2, 0, 2, 4, 0))

    def test_identity(self):
        assert affine_identity().is_identity()
        assert affine_from_params(1.0, 0.0).is_identity()

    def test_scale_and_rotation_inverse(self):
        assert affine_from_params(scale=2.0).apply(3.0, 4.0) == (6.0, 8.0)
        R = affine_from_params(1.0, 30.0)
        assert R.compose(R.inverse()).is_identity(1e-9)


class TestSampling:
    def test_midpoint_and_linear_field_values(self):
        f = np.array([[[0.0, 1.0], [2.0, 3.0]]])
        assert bilinear_sample(f, 0.5, 0.5)[0][0] == pytest.approx(1.5)
        ys, xs = np.mgrid[0:3, 0:3].astype(np.float64)
        assert bilinear_sample((3 * xs + 2 * ys)[None], 1.25, 0.5)[0][0] == pytest.approx(4.75)

    def test_linear_field_is_exact(self, rng, linear_field):
        f = linear_field((9, 11))
        xs = rng.uniform(0, 10, 50)
        ys = rng.uniform(0, 8, 50)
        out, inb = bilinear_sample_grid(f, xs, ys)
        assert inb.all()
        np.testing.assert_allclose(out[0], 2.0 * xs - ys + 3.0, atol=1e-9)
        np.testing.assert_allclose(out[1], 0.5 * xs + ys, atol=1e-9)

    def test_out_of_bounds_is_zero(self, linear_field):
        f = linear_field((4, 4))
        value, inb = bilinear_sample(f, 3.5, 1.0)
        assert not inb
        assert np.all(value == 0)

    def test_last_pixel_centre_in_bounds(self, linear_field):
        f = linear_field((4, 5))
        value, inb = bilinear_sample(f, 4.0, 3.0)
        assert inb
        np.testing.assert_allclose(value, f[:, 3, 4])

    def test_plane_validity_skips_zero_weight_neighbours(self):
        valid = np.ones((4, 5), dtype=bool)
        valid[:, 3] = False
        valid[2, :] = False
        # 最后一列、最后一行的像素中心只看自身
        assert sample_plane_validity(valid, np.array([4.0]), np.array([0.0]))[0]
        assert sample_plane_validity(valid, np.array([0.0]), np.array([3.0]))[0]
        assert sample_plane_validity(valid, np.array([4.0]), np.array([3.0]))[0]
        assert not sample_plane_validity(valid, np.array([3.5]), np.array([0.0]))[0]
        assert not sample_plane_validity(valid, np.array([0.0]), np.array([2.5]))[0]
        assert not sample_plane_validity(valid, np.array([4.5]), np.array([0.0]))[0]

    def test_warp_is_linear_in_features(self, rng):
        f = rng.standard_normal((3, 6, 7))
        g = rng.standard_normal((3, 6, 7))
        A1 = affine_from_params(1.2, 10.0, 0.5, -0.5)
        flow = FlowField.constant((6, 7), 0.3, -0.7)
        T = compose_transform(A1, flow, affine_identity(), (6, 7))
        warped_f, mask = warp_features(f, T)
        warped_g, _ = warp_features(g, T)
        combined, combined_mask = warp_features(2.5 * f - 0.75 * g, T)
        np.testing.assert_array_equal(combined_mask, mask)
        assert mask.any()
        np.testing.assert_allclose(combined, 2.5 * warped_f - 0.75 * warped_g, atol=1e-12)

    def test_warp_identity(self, rng):
        f = rng.standard_normal((3, 5, 6))
        out, mask = warp_features(f, DenseCorrespondence.identity((5, 6)))
        assert mask.all()
        np.testing.assert_array_equal(out, f)

    def test_upsample_same_size_is_identity(self, rng):
        f = rng.standard_normal((2, 4, 5))
        np.testing.assert_allclose(upsample_bilinear(f, 4, 5), f)

    def test_upsample_corners_aligned(self, rng):
        f = rng.standard_normal((1, 3, 4))
        up = upsample_bilinear(f, 9, 13)
        np.testing.assert_allclose(up[:, 0, 0], f[:, 0, 0])
        np.testing.assert_allclose(up[:, -1, -1], f[:, -1, -1])

    def test_upsample_adjoint(self, rng):
        f = rng.standard_normal((2, 3, 4))
        g = rng.standard_normal((2, 7, 10))
        lhs = np.sum(upsample_bilinear(f, 7, 10) * g)
        rhs = np.sum(f * upsample_bilinear_adjoint(g, 3, 4))
        assert abs(lhs - rhs) < 1e-10

    def test_upsample_row(self):
        np.testing.assert_allclose(upsample_bilinear(np.array([[[0.0, 1.0]]]), 1, 4)[0, 0],
                                   [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0])

    def test_upsample_rejects_downsizing(self, rng):
        with pytest.raises(DimensionError):
            upsample_bilinear(rng.standard_normal((1, 4, 4)), 2, 4)

    def test_channel_normalize_unit_norm(self, rng):
        n = channel_normalize(rng.standard_normal((2, 5, 3, 3)))
        np.testing.assert_allclose(np.linalg.norm(n, axis=1), 1.0)

    def test_channel_normalize_values(self):
        f = np.array([3.0, 4.0]).reshape(2, 1, 1)
        np.testing.assert_allclose(channel_normalize(f).ravel(), [0.6, 0.8])
        assert not channel_normalize(np.zeros((3, 2, 2))).any()

    def test_channel_normalize_backward_orthogonal(self, rng):
        f = rng.standard_normal((4, 2, 2))
        grad = channel_normalize_backward(f, rng.standard_normal(f.shape))
        # 梯度与输入方向正交
        np.testing.assert_allclose(np.sum(grad * f, axis=0), 0.0, atol=1e-12)


class TestTransform:
    def test_identity_affines_with_constant_flow(self):
        shape = (6, 8)
        T = compose_transform(affine_identity(), FlowField.constant(shape, 2.0, 0.0), affine_identity(), shape)
        xs, ys = pixel_grid(shape)
        np.testing.assert_allclose(T.tx, xs + 2.0)
        np.testing.assert_allclose(T.ty, ys)
        assert T.valid[:, :-2].all()
        assert not T.valid[:, -2:].any()

    def test_zero_flow_reduces_to_affine(self, rng):
        A1 = affine_from_params(1.1, 12.0, 1.0, -1.0)
        A2 = affine_from_params(0.9, -5.0, 0.5, 2.0)
        T = compose_transform(A1, FlowField.zeros((12, 12)), A2, (8, 8))
        expected = affine_correspondence(A2.compose(A1.inverse()), (8, 8))
        np.testing.assert_allclose(T.tx, expected.tx, atol=1e-9)
        np.testing.assert_allclose(T.ty, expected.ty, atol=1e-9)

    def test_invalid_flow_pixel_propagates(self):
        shape = (5, 5)
        valid = np.ones(shape, dtype=bool)
        valid[2, 2] = False
        flow = FlowField(np.zeros(shape), np.zeros(shape), valid)
        T = compose_transform(affine_identity(), flow, affine_identity(), shape)
        assert not T.valid[2, 2]
        assert T.valid.sum() == 24

    def test_upscaled_first_view_halves_coordinates(self):
        T = compose_transform(affine_from_params(scale=2.0), FlowField.zeros((4, 4)), affine_identity(), (8, 8),
                              v2_shape=(4, 4))
        xs, ys = pixel_grid((8, 8))
        np.testing.assert_allclose(T.tx, xs / 2.0)
        np.testing.assert_allclose(T.ty, ys / 2.0)
        assert T.valid[:7, :7].all() and not T.valid[:, 7].any()

    def test_shift_warps_ramp(self):
        ramp = np.tile(np.arange(8, dtype=np.float64), (1, 5, 1))
        T = compose_transform(affine_identity(), FlowField.constant((5, 8), 2.0, 0.0), affine_identity(), (5, 8))
        out, mask = warp_features(ramp, T)
        xs, _ = pixel_grid((5, 8))
        np.testing.assert_allclose(out[0][mask], (xs + 2.0)[mask])

    def test_raw_shape_mismatch(self):
        with pytest.raises(DimensionError):
            compose_transform(affine_identity(), FlowField.zeros((4, 4)), affine_identity(), (4, 4), in_shape=(5, 5))

    def test_warp_by_translation_matches_shift(self, rng):
        f = rng.standard_normal((2, 6, 6))
        T = compose_transform(affine_identity(), FlowField.constant((6, 6), 1.0, 0.0), affine_identity(), (6, 6))
        out, mask = warp_features(f, T)
        np.testing.assert_allclose(out[:, :, :-1], f[:, :, 1:])
        assert not mask[:, -1].any()


class TestFlow:
    def test_fb_consistency_on_consistent_translation(self):
        shape = (6, 8)
        mask = fb_consistency(FlowField.constant(shape, 1.0, 0.0), FlowField.constant(shape, -1.0, 0.0))
        assert mask[:, :-1].all()
        assert not mask[:, -1].any()

    def test_fb_consistency_flags_disagreement(self):
        shape = (6, 8)
        mask = fb_consistency(FlowField.constant(shape, 1.0, 0.0), FlowField.constant(shape, 1.0, 0.0))
        assert not mask.any()

    def test_fb_consistency_zero_and_large_forward(self):
        shape = (4, 10)
        assert fb_consistency(FlowField.zeros(shape), FlowField.zeros(shape)).all()
        mask = fb_consistency(FlowField.constant(shape, 5.0, 0.0), FlowField.zeros(shape), 0.01, 0.5)
        assert not mask.any()

    def test_flow_rejects_non_finite_valid_pixels(self):
        u = np.zeros((2, 2))
        u[0, 0] = np.nan
        with pytest.raises(DimensionError):
            FlowField(u, np.zeros((2, 2)))
        FlowField(u, np.zeros((2, 2)), np.array([[False, True], [True, True]]))

    def test_flow_stats_and_epe(self):
        a = FlowField.constant((3, 4), 3.0, 4.0)
        stats = flow_stats(a)
        assert (stats["width"], stats["height"]) == (4, 3)
        assert stats["magnitude"]["mean"] == pytest.approx(5.0)
        diff = flow_endpoint_error(a, FlowField.zeros((3, 4)))
        assert diff["epe_max"] == pytest.approx(5.0)
        assert diff["differing"] == 12


class TestFloIO:
    def test_bit_exact_round_trip(self, rng):
        flow = FlowField(rng.standard_normal((3, 5)).astype(np.float32), rng.standard_normal((3, 5)).astype(np.float32))
        data = flo_write(flow)
        assert len(data) == 12 + 3 * 5 * 8
        assert flo_write(flo_read(data)) == data

    def test_single_pixel_layout(self):
        data = flo_write(FlowField.constant((1, 1), 1.5, -2.0))
        assert data == struct.pack("<fiiff", 202021.25, 1, 1, 1.5, -2.0)
        flow = flo_read(data)
        assert (flow.u[0, 0], flow.v[0, 0]) == (1.5, -2.0)

    def test_header_only_is_truncated(self):
        with pytest.raises(FlowFormatError):
            flo_read(struct.pack("<fii", 202021.25, 2, 2))

    def test_bad_magic(self):
        with pytest.raises(FlowFormatError) as info:
            flo_read(b"\x00" * 20)
        assert info.value.offset == 0

    def test_truncated_payload(self, rng):
        data = flo_write(FlowField.zeros((2, 2)))
        with pytest.raises(FlowFormatError):
            flo_read(data[:-1])

    def test_file_wrappers(self, tmp_path):
        path = str(tmp_path / "a.flo")
        flo_write_file(path, FlowField.constant((2, 3), 0.5, -0.25))
        flow = flo_read_file(path)
        assert flow.shape == (2, 3)
        assert np.all(flow.u == 0.5) and np.all(flow.v == -0.25)


class TestImageIO:
    def test_image_round_trip(self, rng, tmp_path):
        img = rng.uniform(0, 1, (3, 4, 6))
        path = str(tmp_path / "img.png")
        save_image(path, img)
        back = load_image(path)
        assert back.shape == img.shape
        assert np.abs(back - img).max() <= 0.5 / 255 + 1e-12

    def test_label_map_round_trip(self, rng, tmp_path):
        labels = rng.integers(0, 4, (5, 7))
        path = str(tmp_path / "labels.png")
        save_label_map(path, labels)
        np.testing.assert_array_equal(load_label_map(path), labels)
