"""Affine head collapse: pooling matrices, masks, full composition."""

import numpy as np
import pytest

from conftest import HEAD_FAMILIES, make_image, make_model
from metric_lens import errors
from metric_lens.linearize import (
    feature_hash,
    gap_matrix,
    gmp_mask,
    linearize_head,
    relu_mask,
)
from metric_lens.nn import LayerSpec, ModelManifest, forward, global_pool, head_forward


def linearized_prediction(head, A):
    """sum_{i,j} W[i,j] @ A[i,j] + B, accumulated in float64."""
    return (
        np.einsum("ijlp,ijp->l", head.W.astype(np.float64), A.astype(np.float64))
        + head.B.astype(np.float64)
    )


class TestGapMatrix:
    def test_degenerate_single_cell(self):
        t = gap_matrix(1, 1, 1)
        assert t.shape == (1, 1, 1, 1)
        assert t[0, 0, 0, 0] == 1.0

    def test_two_cell_entries(self):
        t = gap_matrix(2, 1, 1)
        assert t[0, :, 0, 0].tolist() == [0.5, 0.5]

    def test_reshaped_matrix_equals_gap(self, rng):
        m, n, p = 2, 4, 3  # m*n a power of two so 1/(mn) is exact
        A = rng.standard_normal((m, n, p)).astype(np.float32)
        T = gap_matrix(m, n, p).reshape(p, m * n * p)
        got = T.astype(np.float64) @ A.reshape(-1).astype(np.float64)
        np.testing.assert_array_equal(
            got.astype(np.float32), global_pool(A, "avg")
        )


class TestGmpMask:
    def test_unique_max(self):
        a = np.array([[1.0, 3.0], [2.0, 0.0]], dtype=np.float32)[:, :, None]
        mask = gmp_mask(a)
        assert mask[:, :, 0].tolist() == [[0.0, 1.0], [0.0, 0.0]]
        assert float((mask * a).sum()) == 3.0

    def test_tie_breaks_row_major(self):
        a = np.full((2, 2, 1), 5.0, dtype=np.float32)
        mask = gmp_mask(a)
        assert mask[0, 0, 0] == 1.0
        assert mask.sum() == 1.0

    def test_channel_sums_are_one(self, rng):
        a = rng.standard_normal((3, 5, 7)).astype(np.float32)
        mask = gmp_mask(a)
        np.testing.assert_array_equal(mask.sum(axis=(0, 1)), np.ones(7, dtype=np.float32))

    def test_masked_pooling_recovers_gmp_exactly(self, rng):
        for seed in range(10):
            a = np.random.default_rng(seed).standard_normal((3, 4, 5)).astype(np.float32)
            mask = gmp_mask(a)
            got = (mask * a).sum(axis=(0, 1))
            np.testing.assert_array_equal(got, global_pool(a, "max"))


class TestReluMask:
    def test_signs(self):
        assert relu_mask(np.array([-1.0, 2.0], dtype=np.float32)).tolist() == [0.0, 1.0]

    def test_zero_is_inactive(self):
        assert relu_mask(np.zeros(2, dtype=np.float32)).tolist() == [0.0, 0.0]

    def test_mask_times_input_is_relu(self, rng):
        x = rng.standard_normal(100).astype(np.float32)
        np.testing.assert_array_equal(relu_mask(x) * x, np.maximum(x, 0.0))


class TestLinearizeHead:
    def test_gap_only_is_uniform_identity(self):
        model = make_model("gap", seed=1, feature=(2, 2, 3))
        trace = forward(model, make_image(model, 1))
        head = linearize_head(model, trace)
        m, n, p = 2, 2, 3
        expected = np.broadcast_to(np.eye(p, dtype=np.float32) / (m * n), (m, n, p, p))
        np.testing.assert_array_equal(head.W, expected)
        np.testing.assert_array_equal(head.B, np.zeros(p, dtype=np.float32))

    def test_flatten_fc_blocks_are_fc_columns(self):
        model = make_model("flatten_fc", seed=2, feature=(2, 3, 4), l=5)
        trace = forward(model, make_image(model, 2))
        head = linearize_head(model, trace)
        fc = model.layers[-1].params
        w_hat = fc["weights"]  # [l, mnp]
        m, n, p = 2, 3, 4
        for i in range(m):
            for j in range(n):
                cols = w_hat[:, (i * n + j) * p : (i * n + j + 1) * p]
                np.testing.assert_array_equal(head.W[i, j], cols)
        np.testing.assert_array_equal(head.B, fc["bias"])

    def test_gmp_selection_is_exact(self):
        model = make_model("gmp", seed=3)
        trace = forward(model, make_image(model, 3))
        head = linearize_head(model, trace)
        A = trace.conv_feature
        got = linearized_prediction(head, A).astype(np.float32)
        np.testing.assert_array_equal(got, global_pool(A, "max"))

    @pytest.mark.parametrize("head_kind", HEAD_FAMILIES + ("gap_fc", "gmp_fc_relu_fc"))
    def test_exact_at_operating_point(self, head_kind):
        model = make_model(head_kind, seed=4)
        trace = forward(model, make_image(model, 7))
        head = linearize_head(model, trace)
        got = linearized_prediction(head, trace.conv_feature)
        np.testing.assert_allclose(got, trace.embedding, atol=1e-6)

    def test_gmp_fc_relu_fc_against_forward_oracle(self):
        model = make_model("gmp_fc_relu_fc", seed=6)
        trace = forward(model, make_image(model, 11))
        head = linearize_head(model, trace)
        got = linearized_prediction(head, trace.conv_feature)
        ref = head_forward(trace.conv_feature, model)
        np.testing.assert_allclose(got, ref, atol=1e-6)

    def test_l2_normalize_excluded_from_affine(self):
        model = make_model("flatten_fc", seed=8, l2_normalize=True)
        trace = forward(model, make_image(model, 9))
        head = linearize_head(model, trace)
        got = linearized_prediction(head, trace.conv_feature)
        np.testing.assert_allclose(got, trace.embedding, atol=1e-6)

    def test_gap_agrees_with_flatten_route_on_gap_heads(self):
        # same affine map whether GAP is composed as a pooling matrix or
        # expressed through flatten + an equivalent averaging FC
        m, n, p = 2, 2, 3
        model_gap = make_model("gap", seed=10, feature=(m, n, p))
        trace = forward(model_gap, make_image(model_gap, 10))
        head_gap = linearize_head(model_gap, trace)

        avg_fc = np.zeros((p, m * n * p), dtype=np.float32)
        for i in range(m):
            for j in range(n):
                for k in range(p):
                    avg_fc[k, (i * n + j) * p + k] = 1.0 / (m * n)
        model_flat = ModelManifest(
            name="gap-as-fc",
            input_shape=model_gap.input_shape,
            layers=model_gap.layers[:2]
            + [
                LayerSpec("flatten"),
                LayerSpec(
                    "fully_connected",
                    {"weights": avg_fc, "bias": np.zeros(p, dtype=np.float32)},
                ),
            ],
            last_conv_index=1,
        )
        trace_flat = forward(model_flat, make_image(model_gap, 10))
        head_flat = linearize_head(model_flat, trace_flat)
        np.testing.assert_array_equal(head_gap.W, head_flat.W)
        np.testing.assert_array_equal(head_gap.B, head_flat.B)

    def test_relu_after_flatten_unsupported(self):
        model = make_model("flatten_fc", seed=12)
        model.layers.insert(3, LayerSpec("relu"))  # flatten, relu, fc
        trace = forward(model, make_image(model, 12))
        with pytest.raises(errors.UnsupportedHead):
            linearize_head(model, trace)

    def test_hash_binds_to_feature(self):
        model = make_model("gmp", seed=14)
        trace = forward(model, make_image(model, 14))
        head = linearize_head(model, trace)
        assert head.operating_point_hash == feature_hash(trace.conv_feature)
        other = forward(model, make_image(model, 15))
        assert head.operating_point_hash != feature_hash(other.conv_feature)

    def test_save_writes_tensors(self, tmp_path):
        from metric_lens.tensor import read_tensor

        model = make_model("gap", seed=16)
        trace = forward(model, make_image(model, 16))
        head = linearize_head(model, trace)
        head.save(tmp_path)
        np.testing.assert_array_equal(read_tensor(tmp_path / "W.tnsr"), head.W)
        np.testing.assert_array_equal(read_tensor(tmp_path / "B.tnsr"), head.B)
