"""Closed-form Grad-CAM family and its relationship to decomposition."""

import numpy as np
import pytest

from conftest import make_decomposition, make_image, make_model
from metric_lens import errors
from metric_lens.decompose import decompose_pair, overall_map
from metric_lens.gradcam import gradcam_classification, gradcam_metric, l2norm_jacobian
from metric_lens.linearize import LinearizedHead, feature_hash, gmp_mask, linearize_head
from metric_lens.nn import forward, head_forward


def numeric_jacobian(e, h=1e-3):
    e = np.asarray(e, dtype=np.float64)
    jac = np.zeros((e.size, e.size))
    for j in range(e.size):
        ep, em = e.copy(), e.copy()
        ep[j] += h
        em[j] -= h
        jac[:, j] = (ep / np.linalg.norm(ep) - em / np.linalg.norm(em)) / (2 * h)
    return jac


class TestJacobian:
    def test_hand_values_3_4(self):
        jac = l2norm_jacobian(np.array([3.0, 4.0], dtype=np.float32))
        np.testing.assert_allclose(
            jac, [[0.128, -0.096], [-0.096, 0.072]], atol=1e-7
        )

    def test_unit_axis_vector(self):
        jac = l2norm_jacobian(np.array([1.0, 0.0], dtype=np.float32))
        np.testing.assert_allclose(jac, [[0.0, 0.0], [0.0, 1.0]], atol=1e-7)

    def test_matches_finite_differences(self, rng):
        for _ in range(20):
            e = rng.standard_normal(5)
            if np.linalg.norm(e) < 0.3:
                continue
            jac = l2norm_jacobian(e.astype(np.float32))
            assert np.abs(jac - numeric_jacobian(e)).max() <= 1e-4

    def test_symmetric_and_orthogonal_to_embedding(self, rng):
        for _ in range(20):
            e = rng.standard_normal(6)
            norm = np.linalg.norm(e)
            if norm < 0.3:
                continue
            jac = l2norm_jacobian(e.astype(np.float32)).astype(np.float64)
            np.testing.assert_allclose(jac, jac.T, atol=1e-7)
            assert np.abs(jac @ e).max() <= 1e-6 * norm

    def test_degenerate_embedding(self):
        with pytest.raises(errors.DegenerateEmbedding):
            l2norm_jacobian(np.zeros(3, dtype=np.float32))


class TestGradcamClassification:
    def test_flatten_with_constant_weights_equals_decomposition(self, rng):
        # when W is identical at every position, GAP(W_k) = W_k and the
        # Grad-CAM map coincides with the per-position decomposition
        m, n, p, classes = 3, 4, 2, 5
        A = rng.standard_normal((m, n, p)).astype(np.float32)
        w_cell = rng.standard_normal((p, classes)).astype(np.float32)
        w = np.broadcast_to(w_cell, (m, n, p, classes)).copy()
        amap = gradcam_classification(A, "flatten_fc", w, 1)
        decomp = np.einsum("ijk,k->ij", A.astype(np.float64), w_cell[:, 1].astype(np.float64))
        np.testing.assert_allclose(amap.values, decomp, atol=1e-6)

    def test_gmp_head_support_difference(self, rng):
        # decomposition activates only channel-max cells; Grad-CAM is dense
        m, n, p = 3, 4, 3
        A = np.abs(rng.standard_normal((m, n, p))).astype(np.float32) + 0.1
        w = np.abs(rng.standard_normal((p, 2))).astype(np.float32) + 0.1
        amap = gradcam_classification(A, "gmp_fc", w, 0)
        assert np.all(amap.values != 0.0)

        mask = gmp_mask(A)
        decomp = np.einsum(
            "ijk,ijk,k->ij",
            A.astype(np.float64),
            mask.astype(np.float64),
            w[:, 0].astype(np.float64),
        )
        assert (decomp != 0).sum() <= p
        assert (np.abs(amap.values) > 0).sum() > (decomp != 0).sum()

    def test_gmp_map_formula(self, rng):
        m, n, p = 2, 3, 4
        A = rng.standard_normal((m, n, p)).astype(np.float32)
        w = rng.standard_normal((p, 3)).astype(np.float32)
        amap = gradcam_classification(A, "gmp_fc", w, 2)
        ref = A.astype(np.float64) @ w[:, 2].astype(np.float64) / (m * n)
        np.testing.assert_allclose(amap.values, ref, atol=1e-7)

    def test_zero_feature_zero_map(self):
        amap = gradcam_classification(
            np.zeros((2, 2, 3), dtype=np.float32),
            "gmp_fc",
            np.ones((3, 2), dtype=np.float32),
            0,
        )
        assert np.all(amap.values == 0.0)

    def test_unknown_head_kind(self, rng):
        with pytest.raises(errors.UnsupportedHead):
            gradcam_classification(
                np.zeros((2, 2, 3), dtype=np.float32), "gap_fc", np.zeros((3, 2)), 0
            )


class TestGradcamMetric:
    def test_gap_no_norm_proportional_to_pairwise_map(self, rng):
        # bias-free GAP pair: the no-norm map is a positive multiple of the
        # raw cross-correlation map sum_k A^q_ijk (sum_xy A^r_xyk)
        model, trace_q, trace_r, head_q, head_r, d = make_decomposition(
            "gap", seed=81, with_bias=False
        )
        amap = gradcam_metric(
            head_q, trace_q.conv_feature, d.embedding_q, d.embedding_r, normalized=False
        )
        raw = np.einsum(
            "ijk,k->ij",
            trace_q.conv_feature.astype(np.float64),
            trace_r.conv_feature.astype(np.float64).sum(axis=(0, 1)),
        )
        ratio = amap.values[np.abs(raw) > 1e-6] / raw[np.abs(raw) > 1e-6]
        assert ratio.size > 0
        assert np.all(ratio > 0)
        np.testing.assert_allclose(ratio, ratio[0], rtol=1e-4)

    @pytest.mark.parametrize("head_kind", ["flatten_fc", "gmp_fc_relu_fc"])
    def test_differs_from_decomposition_on_non_gap_heads(self, head_kind):
        _, trace_q, _, head_q, _, d = make_decomposition(head_kind, seed=82)
        amap = gradcam_metric(
            head_q, trace_q.conv_feature, d.embedding_q, d.embedding_r, normalized=False
        )
        target = overall_map(d, "query", with_bias=True)
        assert np.abs(amap.values - target.values).max() > 1e-4

    def test_removing_gap_and_jacobian_recovers_decomposition_bias(self):
        for head_kind in ("gap", "flatten_fc", "gmp_fc_relu_fc"):
            _, trace_q, _, head_q, _, d = make_decomposition(head_kind, seed=83)
            amap = gradcam_metric(
                head_q,
                trace_q.conv_feature,
                d.embedding_q,
                d.embedding_r,
                normalized=False,
                gap_weights=False,
            )
            target = overall_map(d, "query", with_bias=True)
            np.testing.assert_allclose(amap.values, target.values, rtol=1e-6, atol=1e-7)

    def test_normalized_map_equals_numerical_cosine_gradient(self):
        model, trace_q, trace_r, head_q, _, _ = make_decomposition("flatten_fc", seed=84)
        A = trace_q.conv_feature
        er = trace_r.embedding.astype(np.float64)

        def cosine(feature):
            eq = head_forward(feature, model).astype(np.float64)
            return float(eq @ er / (np.linalg.norm(eq) * np.linalg.norm(er)))

        h = 1e-3
        grad = np.zeros(A.shape)
        for idx in np.ndindex(A.shape):
            ap, am = A.copy(), A.copy()
            ap[idx] += h
            am[idx] -= h
            grad[idx] = (cosine(ap) - cosine(am)) / (2 * h)
        num_map = A.astype(np.float64) @ grad.mean(axis=(0, 1))

        amap = gradcam_metric(head_q, A, trace_q.embedding, trace_r.embedding, normalized=True)
        assert np.abs(amap.values - num_map).max() <= 1e-3

    def test_jacobian_shrinks_dominant_channel_weight(self, rng):
        # dominant embedding coordinate gets relatively less weight once the
        # normalization Jacobian is applied (the scattering effect)
        m, n, p = 2, 2, 4
        A = np.abs(rng.standard_normal((m, n, p))).astype(np.float32)
        W = np.broadcast_to(np.eye(p, dtype=np.float32) / (m * n), (m, n, p, p)).copy()
        e_q = np.array([10.0, 1.0, 1.0, 1.0], dtype=np.float32)
        e_r = (0.5 + rng.random(p)).astype(np.float32)
        head = LinearizedHead(W=W, B=np.zeros(p, dtype=np.float32), operating_point_hash=feature_hash(A))

        w_bar = W.astype(np.float64).mean(axis=(0, 1))
        weights_norm = np.abs(
            w_bar.T @ l2norm_jacobian(e_q).astype(np.float64) @ e_r.astype(np.float64)
        )
        weights_nonorm = np.abs(w_bar.T @ e_r.astype(np.float64))
        rel_norm = weights_norm[0] / weights_norm.sum()
        rel_nonorm = weights_nonorm[0] / weights_nonorm.sum()
        assert rel_norm < rel_nonorm

        # and the public maps reflect the same channel weighting
        g_norm = gradcam_metric(head, A, e_q, e_r, normalized=True)
        g_nonorm = gradcam_metric(head, A, e_q, e_r, normalized=False)
        assert g_norm.variant == "gradcam"
        assert g_nonorm.variant == "gradcam_nonorm"

    def test_clip_flag(self):
        _, trace_q, _, head_q, _, d = make_decomposition("flatten_fc", seed=85)
        raw = gradcam_metric(
            head_q, trace_q.conv_feature, d.embedding_q, d.embedding_r, normalized=False
        )
        clipped = gradcam_metric(
            head_q,
            trace_q.conv_feature,
            d.embedding_q,
            d.embedding_r,
            normalized=False,
            clip=True,
        )
        assert raw.values.min() < 0
        assert clipped.values.min() == 0.0
        np.testing.assert_array_equal(clipped.values, np.maximum(raw.values, 0.0))

    def test_degenerate_embedding(self):
        _, trace_q, _, head_q, _, d = make_decomposition("flatten_fc", seed=86)
        with pytest.raises(errors.DegenerateEmbedding):
            gradcam_metric(
                head_q,
                trace_q.conv_feature,
                np.zeros_like(d.embedding_q),
                d.embedding_r,
                normalized=True,
            )
