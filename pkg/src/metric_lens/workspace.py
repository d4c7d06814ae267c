"""Read-only workspace backing the CLI and the HTTP service.

A workspace config is a JSON file::

    {"model": "model.json", "images": "tensors/", "index": "index/"}

Paths resolve against the config's directory. Images are preprocessed
tensors (*.tnsr) whose stems become ids. Everything — traces, linearized
heads, the embedding index — is computed eagerly at load so request handling
never mutates state.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyInput, UnknownId
from .linearize import LinearizedHead, linearize_head
from .nn import ForwardTrace, ModelManifest, forward
from .retrieval import EmbeddingIndex, load_index
from .tensor import read_tensor


@dataclass
class Workspace:
    model: ModelManifest
    ids: list
    images: dict  # id -> tensor [h,w,c]
    traces: dict  # id -> ForwardTrace
    heads: dict  # id -> LinearizedHead
    index: EmbeddingIndex

    def image(self, image_id: str) -> np.ndarray:
        self._check(image_id)
        return self.images[image_id]

    def trace(self, image_id: str) -> ForwardTrace:
        self._check(image_id)
        return self.traces[image_id]

    def head(self, image_id: str) -> LinearizedHead:
        self._check(image_id)
        return self.heads[image_id]

    def _check(self, image_id: str) -> None:
        if image_id not in self.images:
            raise UnknownId(f"unknown image id {image_id!r}")


def load_workspace(config_path) -> Workspace:
    config_path = Path(config_path)
    with open(config_path, "r", encoding="utf-8") as fh:
        cfg = json.load(fh)
    base = config_path.parent

    model = ModelManifest.load(base / cfg["model"])
    images_dir = base / cfg["images"]
    tensor_paths = sorted(images_dir.glob("*.tnsr"))
    if not tensor_paths:
        raise EmptyInput(f"no .tnsr images under {images_dir}")

    ids, images, traces, heads = [], {}, {}, {}
    for path in tensor_paths:
        image_id = path.stem
        tensor = read_tensor(path)
        trace = forward(model, tensor)
        ids.append(image_id)
        images[image_id] = tensor
        traces[image_id] = trace
        heads[image_id] = linearize_head(model, trace)

    if "index" in cfg and (base / cfg["index"]).exists():
        index = load_index(base / cfg["index"])
    else:
        embeddings = np.stack([traces[i].embedding for i in ids]).astype(np.float32)
        norms = np.linalg.norm(embeddings.astype(np.float64), axis=1).astype(np.float32)
        index = EmbeddingIndex(
            ids=list(ids),
            image_refs=[str(images_dir / f"{i}.tnsr") for i in ids],
            embeddings=embeddings,
            norms=norms,
        )
    return Workspace(
        model=model, ids=ids, images=images, traces=traces, heads=heads, index=index
    )
