"""Shared fixture builders: tiny randomized models for every head family."""

import numpy as np
import pytest

from metric_lens.decompose import decompose_pair
from metric_lens.linearize import linearize_head
from metric_lens.nn import LayerSpec, ModelManifest, forward

HEAD_FAMILIES = ("gap", "gmp", "flatten_fc", "flatten_fc_relu", "flatten_fc_relu_bn")


def make_model(
    head="gap",
    seed=0,
    feature=(3, 4, 5),
    l=3,
    in_channels=2,
    with_bias=True,
    l2_normalize=False,
    hidden=6,
):
    """Conv(3x3, valid) + relu backbone producing ``feature``, plus a head."""
    rng = np.random.default_rng(seed)
    m, n, p = feature

    def t(shape, scale=0.3):
        return (rng.standard_normal(shape) * scale).astype(np.float32)

    def b(shape, scale=0.1):
        if not with_bias:
            return np.zeros(shape, dtype=np.float32)
        return (rng.standard_normal(shape) * scale).astype(np.float32)

    layers = [
        LayerSpec(
            "conv2d",
            {"weights": t((3, 3, in_channels, p)), "bias": b(p), "stride": 1, "padding": 0},
        ),
        LayerSpec("relu"),
    ]
    mnp = m * n * p
    if head == "gap":
        layers += [LayerSpec("global_avg_pool")]
    elif head == "gmp":
        layers += [LayerSpec("global_max_pool")]
    elif head == "gap_fc":
        layers += [
            LayerSpec("global_avg_pool"),
            LayerSpec("fully_connected", {"weights": t((l, p), 0.4), "bias": b(l)}),
        ]
    elif head == "gmp_fc_relu_fc":
        layers += [
            LayerSpec("global_max_pool"),
            LayerSpec("fully_connected", {"weights": t((hidden, p), 0.4), "bias": b(hidden)}),
            LayerSpec("relu"),
            LayerSpec("fully_connected", {"weights": t((l, hidden), 0.4), "bias": b(l)}),
        ]
    elif head == "flatten_fc":
        layers += [
            LayerSpec("flatten"),
            LayerSpec("fully_connected", {"weights": t((l, mnp), 0.2), "bias": b(l)}),
        ]
    elif head == "flatten_fc_relu":
        layers += [
            LayerSpec("flatten"),
            LayerSpec("fully_connected", {"weights": t((hidden, mnp), 0.2), "bias": b(hidden)}),
            LayerSpec("relu"),
            LayerSpec("fully_connected", {"weights": t((l, hidden), 0.4), "bias": b(l)}),
        ]
    elif head == "flatten_fc_relu_bn":
        layers += [
            LayerSpec("flatten"),
            LayerSpec("fully_connected", {"weights": t((hidden, mnp), 0.2), "bias": b(hidden)}),
            LayerSpec("relu"),
            LayerSpec(
                "batchnorm",
                {
                    "gamma": (1.0 + 0.2 * rng.standard_normal(hidden)).astype(np.float32),
                    "beta": b(hidden),
                    "mean": (0.1 * rng.standard_normal(hidden)).astype(np.float32),
                    "var": (1.0 + 0.3 * rng.random(hidden)).astype(np.float32),
                    "epsilon": 1e-5,
                },
            ),
            LayerSpec("fully_connected", {"weights": t((l, hidden), 0.4), "bias": b(l)}),
        ]
    else:
        raise ValueError(f"unknown head family {head!r}")
    if l2_normalize:
        layers += [LayerSpec("l2_normalize")]
    return ModelManifest(
        name=f"toy-{head}",
        input_shape=(m + 2, n + 2, in_channels),
        layers=layers,
        last_conv_index=1,
    )


def make_image(model, seed):
    rng = np.random.default_rng(seed)
    return rng.standard_normal(model.input_shape).astype(np.float32)


def make_pair(head, seed, min_abs_sim=0.02, **model_kwargs):
    """Model + two traces + linearized heads, rejecting near-orthogonal or
    degenerate pairs so relative tolerances stay meaningful."""
    model = make_model(head, seed=seed, **model_kwargs)
    for attempt in range(50):
        trace_q = forward(model, make_image(model, seed * 1000 + 2 * attempt))
        trace_r = forward(model, make_image(model, seed * 1000 + 2 * attempt + 1))
        eq = trace_q.embedding.astype(np.float64)
        er = trace_r.embedding.astype(np.float64)
        nq, nr = np.linalg.norm(eq), np.linalg.norm(er)
        if nq < 1e-3 or nr < 1e-3:
            continue
        if abs(eq @ er) / (nq * nr) < min_abs_sim:
            continue
        head_q = linearize_head(model, trace_q)
        head_r = linearize_head(model, trace_r)
        return model, trace_q, trace_r, head_q, head_r
    raise RuntimeError(f"no usable pair for head={head} seed={seed}")


def make_decomposition(head, seed, **model_kwargs):
    model, trace_q, trace_r, head_q, head_r = make_pair(head, seed, **model_kwargs)
    d = decompose_pair(head_q, trace_q.conv_feature, head_r, trace_r.conv_feature)
    return model, trace_q, trace_r, head_q, head_r, d


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
