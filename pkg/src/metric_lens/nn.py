"""Minimal deterministic CNN inference over manifest-described models.

A model is an ordered list of layers; the layer at ``last_conv_index``
produces the feature map A that all explanation math operates on. Layers
after it form the head. The engine is forward-only: gradients used elsewhere
are closed-form, so there is no autodiff.

Layer vocabulary: conv2d, relu, batchnorm, global_avg_pool, global_max_pool,
flatten, fully_connected, l2_normalize. Feature maps are [h, w, c]; flatten
is row-major (channel fastest), so a fully-connected weight column order is
(i, j, k) -> i*n*p + j*p + k.

All arithmetic accumulates in float64 and stores float32 per layer, which
keeps the equality checks between the direct forward pass and the linearized
head tight (see ``linearize``).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import DegenerateEmbedding, ShapeMismatch, UnsupportedHead
from .tensor import as_tensor, read_tensor, write_tensor

CONV_KINDS = ("conv2d", "relu", "batchnorm")
POOL_KINDS = ("global_avg_pool", "global_max_pool")
KNOWN_KINDS = CONV_KINDS + POOL_KINDS + ("flatten", "fully_connected", "l2_normalize")


@dataclass
class LayerSpec:
    """One layer: a kind plus kind-specific params (weights held in memory)."""

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KNOWN_KINDS:
            raise ShapeMismatch(f"unknown layer kind {self.kind!r}")


@dataclass
class ModelManifest:
    name: str
    input_shape: tuple  # (h, w, c)
    layers: list
    last_conv_index: int
    preprocess: dict | None = None

    def __post_init__(self):
        self.input_shape = tuple(int(d) for d in self.input_shape)
        if len(self.input_shape) != 3:
            raise ShapeMismatch(f"input_shape must be [h,w,c], got {self.input_shape}")
        if not 0 <= self.last_conv_index < len(self.layers):
            raise ShapeMismatch(
                f"last_conv_index {self.last_conv_index} outside layer list"
            )
        self._validate_structure()
        self.layer_shapes = self._infer_shapes()

    def _validate_structure(self):
        head = self.layers[self.last_conv_index + 1 :]
        n_reduce = sum(1 for s in head if s.kind in POOL_KINDS + ("flatten",))
        if n_reduce != 1:
            raise ShapeMismatch(
                "head must contain exactly one global pooling or flatten layer"
            )
        l2_positions = [i for i, s in enumerate(self.layers) if s.kind == "l2_normalize"]
        if len(l2_positions) > 1:
            raise ShapeMismatch("at most one l2_normalize layer allowed")
        if l2_positions and l2_positions[0] != len(self.layers) - 1:
            raise ShapeMismatch("l2_normalize must be the last layer")

    def _infer_shapes(self):
        """Output shape of every layer; raises ShapeMismatch at the offender."""
        shapes = []
        cur = self.input_shape
        for idx, layer in enumerate(self.layers):
            try:
                cur = _infer_layer_shape(layer, cur)
            except ShapeMismatch as exc:
                raise ShapeMismatch(f"layer {idx} ({layer.kind}): {exc}") from exc
            shapes.append(cur)
        return shapes

    @property
    def conv_feature_shape(self) -> tuple:
        return self.layer_shapes[self.last_conv_index]

    @property
    def has_l2_normalize(self) -> bool:
        return self.layers[-1].kind == "l2_normalize"

    @property
    def embedding_length(self) -> int:
        idx = len(self.layers) - (2 if self.has_l2_normalize else 1)
        shape = self.layer_shapes[idx]
        if len(shape) != 1:
            raise UnsupportedHead(f"head output is not a vector: {shape}")
        return shape[0]

    @classmethod
    def load(cls, path) -> "ModelManifest":
        path = Path(path)
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        return cls.from_dict(doc, base_dir=path.parent)

    @classmethod
    def from_dict(cls, doc: dict, base_dir=None) -> "ModelManifest":
        base = Path(base_dir) if base_dir is not None else Path(".")

        def tensor_ref(value):
            return read_tensor(base / value) if isinstance(value, str) else as_tensor(value)

        layers = []
        for entry in doc["layers"]:
            entry = dict(entry)
            kind = entry.pop("kind")
            params = {}
            for key, value in entry.items():
                if key in ("weights", "bias", "gamma", "beta", "mean", "var"):
                    params[key] = tensor_ref(value)
                else:
                    params[key] = value
            layers.append(LayerSpec(kind, params))
        return cls(
            name=doc.get("name", "model"),
            input_shape=tuple(doc["input_shape"]),
            layers=layers,
            last_conv_index=int(doc["last_conv_index"]),
            preprocess=doc.get("preprocess"),
        )

    def save(self, out_dir) -> Path:
        """Write weights as TNSR files plus a model.json next to them."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        doc_layers = []
        for idx, layer in enumerate(self.layers):
            entry = {"kind": layer.kind}
            for key, value in layer.params.items():
                if isinstance(value, np.ndarray):
                    fname = f"layer{idx}_{key}.tnsr"
                    write_tensor(value, out_dir / fname)
                    entry[key] = fname
                else:
                    entry[key] = value
            doc_layers.append(entry)
        doc = {
            "name": self.name,
            "input_shape": list(self.input_shape),
            "layers": doc_layers,
            "last_conv_index": self.last_conv_index,
        }
        if self.preprocess:
            doc["preprocess"] = self.preprocess
        manifest_path = out_dir / "model.json"
        with open(manifest_path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=1)
        return manifest_path


@dataclass
class ForwardTrace:
    """Everything downstream explanation needs from one forward pass."""

    conv_feature: np.ndarray  # A, [m,n,p]
    embedding: np.ndarray  # E before any final l2_normalize, [l]
    layer_outputs: list  # output of every layer, in order
    normalized_embedding: np.ndarray | None = None


def _infer_layer_shape(layer: LayerSpec, in_shape: tuple) -> tuple:
    kind, params = layer.kind, layer.params
    if kind == "conv2d":
        if len(in_shape) != 3:
            raise ShapeMismatch(f"conv2d needs rank-3 input, got {in_shape}")
        weight = params["weights"]
        kh, kw, c_in, c_out = weight.shape
        stride = int(params.get("stride", 1))
        padding = int(params.get("padding", 0))
        h, w, c = in_shape
        if c != c_in:
            raise ShapeMismatch(f"input channels {c} != kernel channels {c_in}")
        if kh > h + 2 * padding or kw > w + 2 * padding:
            raise ShapeMismatch(f"kernel {kh}x{kw} larger than padded input")
        if params["bias"].shape != (c_out,):
            raise ShapeMismatch("bias length != output channels")
        out_h = (h + 2 * padding - kh) // stride + 1
        out_w = (w + 2 * padding - kw) // stride + 1
        return (out_h, out_w, c_out)
    if kind == "relu":
        return in_shape
    if kind == "batchnorm":
        n = in_shape[-1]
        for key in ("gamma", "beta", "mean", "var"):
            if params[key].shape != (n,):
                raise ShapeMismatch(f"batchnorm {key} length != {n}")
        return in_shape
    if kind in POOL_KINDS:
        if len(in_shape) != 3:
            raise ShapeMismatch(f"global pool needs rank-3 input, got {in_shape}")
        return (in_shape[2],)
    if kind == "flatten":
        n = 1
        for d in in_shape:
            n *= d
        return (n,)
    if kind == "fully_connected":
        weight = params["weights"]
        out_dim, in_dim = weight.shape
        if in_shape != (in_dim,):
            raise ShapeMismatch(f"fc expects input ({in_dim},), got {in_shape}")
        if params["bias"].shape != (out_dim,):
            raise ShapeMismatch("fc bias length != output dim")
        return (out_dim,)
    if kind == "l2_normalize":
        return in_shape
    raise ShapeMismatch(f"unknown layer kind {kind!r}")


def conv2d(inp, weight, bias, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Standard cross-correlation with zero padding (no kernel flip)."""
    inp = as_tensor(inp)
    weight = as_tensor(weight)
    bias = as_tensor(bias)
    if inp.ndim != 3 or weight.ndim != 4 or bias.ndim != 1:
        raise ShapeMismatch("conv2d expects input [h,w,c], weight [kh,kw,cin,cout], bias [cout]")
    if inp.shape[2] != weight.shape[2]:
        raise ShapeMismatch(
            f"input channels {inp.shape[2]} != kernel channels {weight.shape[2]}"
        )
    if bias.shape[0] != weight.shape[3]:
        raise ShapeMismatch("bias length != output channels")
    if weight.shape[0] > inp.shape[0] + 2 * padding or weight.shape[1] > inp.shape[1] + 2 * padding:
        raise ShapeMismatch("kernel larger than padded input")
    return kernels.conv2d(inp, weight, bias, stride, padding)


def global_pool(inp, mode: str) -> np.ndarray:
    """Per-channel mean or maximum over all spatial positions."""
    inp = as_tensor(inp)
    if inp.ndim != 3:
        raise ShapeMismatch(f"global_pool needs rank-3 input, got {inp.shape}")
    a64 = inp.astype(np.float64)
    if mode == "avg":
        return a64.mean(axis=(0, 1)).astype(np.float32)
    if mode == "max":
        return inp.max(axis=(0, 1))
    raise ShapeMismatch(f"unknown pool mode {mode!r}")


def apply_layer(layer: LayerSpec, x: np.ndarray) -> np.ndarray:
    kind, params = layer.kind, layer.params
    if kind == "conv2d":
        return conv2d(
            x,
            params["weights"],
            params["bias"],
            int(params.get("stride", 1)),
            int(params.get("padding", 0)),
        )
    if kind == "relu":
        return np.maximum(x, np.float32(0.0))
    if kind == "batchnorm":
        eps = float(params.get("epsilon", 1e-5))
        gamma = params["gamma"].astype(np.float64)
        beta = params["beta"].astype(np.float64)
        mean = params["mean"].astype(np.float64)
        var = params["var"].astype(np.float64)
        scale = gamma / np.sqrt(var + eps)
        return (x.astype(np.float64) * scale + (beta - scale * mean)).astype(np.float32)
    if kind == "global_avg_pool":
        return global_pool(x, "avg")
    if kind == "global_max_pool":
        return global_pool(x, "max")
    if kind == "flatten":
        return np.ascontiguousarray(x).reshape(-1)
    if kind == "fully_connected":
        w64 = params["weights"].astype(np.float64)
        b64 = params["bias"].astype(np.float64)
        return (w64 @ x.astype(np.float64) + b64).astype(np.float32)
    if kind == "l2_normalize":
        norm = float(np.linalg.norm(x.astype(np.float64)))
        if norm <= 1e-12:
            raise DegenerateEmbedding("cannot l2-normalize near-zero embedding")
        return (x.astype(np.float64) / norm).astype(np.float32)
    raise ShapeMismatch(f"unknown layer kind {kind!r}")


def forward(model: ModelManifest, image) -> ForwardTrace:
    """Run the full model, recording A, E, and every intermediate output."""
    image = as_tensor(image)
    if image.shape != model.input_shape:
        raise ShapeMismatch(
            f"image shape {image.shape} != manifest input {model.input_shape}"
        )
    outputs = []
    x = image
    for idx, layer in enumerate(model.layers):
        try:
            x = apply_layer(layer, x)
        except ShapeMismatch as exc:
            raise ShapeMismatch(f"layer {idx} ({layer.kind}): {exc}") from exc
        outputs.append(x)
    conv_feature = outputs[model.last_conv_index]
    if model.has_l2_normalize:
        embedding = outputs[-2]
        normalized = outputs[-1]
    else:
        embedding = outputs[-1]
        normalized = None
    if embedding.ndim != 1:
        raise ShapeMismatch(f"head output is not a vector: {embedding.shape}")
    return ForwardTrace(
        conv_feature=conv_feature,
        embedding=embedding,
        layer_outputs=outputs,
        normalized_embedding=normalized,
    )


def head_forward(feature, model: ModelManifest) -> np.ndarray:
    """Apply only the head (layers after last_conv_index) to a feature map.

    Returns the embedding before any final l2_normalize, so it matches
    ForwardTrace.embedding exactly when fed that trace's conv_feature.
    """
    x = as_tensor(feature)
    if x.shape != model.conv_feature_shape:
        raise ShapeMismatch(
            f"feature shape {x.shape} != conv output {model.conv_feature_shape}"
        )
    for idx in range(model.last_conv_index + 1, len(model.layers)):
        layer = model.layers[idx]
        if layer.kind == "l2_normalize":
            break
        try:
            x = apply_layer(layer, x)
        except ShapeMismatch as exc:
            raise ShapeMismatch(f"layer {idx} ({layer.kind}): {exc}") from exc
    return x
