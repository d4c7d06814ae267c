"""Request handlers and the HTTP app exposing them to the UI.

Handlers are plain functions over a read-only Workspace so the CLI and the
FastAPI routes share one code path. Responses are pure functions of
(workspace, request): replaying a request yields byte-identical JSON.

Endpoints::

    GET  /api/images           ids and dimensions
    GET  /api/image/{id}       rendered tensor as PNG
    POST /api/explain          overall maps + similarity for a pair
    POST /api/point            point-specific map for a clicked pixel
    POST /api/retrieve         overall or RoI-interactive ranking

The explain maps are upsampled to image resolution server-side; the point
map is returned at feature resolution (its sum then equals the overall map
value at the clicked cell) and scaled client-side.
"""

import io

import numpy as np
from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, Response

from .decompose import (
    ActivationMap,
    decompose_pair,
    overall_map,
    pixel_to_cell,
    point_specific_map,
)
from .errors import (
    MetricLensError,
    PointOutOfRange,
    UnknownId,
    VariantUnsupported,
)
from .gradcam import gradcam_metric
from .workspace import Workspace

EXPLAIN_VARIANTS = ("overall_decomp", "overall_decomp_bias", "gradcam", "gradcam_nonorm")


def map_payload(amap: ActivationMap) -> dict:
    vals = amap.values
    return {
        "h": int(vals.shape[0]),
        "w": int(vals.shape[1]),
        "values": [float(v) for v in vals.ravel()],
        "min": float(vals.min()),
        "max": float(vals.max()),
    }


def _pair(ws: Workspace, query_id: str, ref_id: str):
    return decompose_pair(
        ws.head(query_id), ws.trace(query_id).conv_feature,
        ws.head(ref_id), ws.trace(ref_id).conv_feature,
    )


def handle_explain(ws: Workspace, req: dict) -> dict:
    query_id, ref_id = req["query_id"], req["ref_id"]
    variant = req.get("variant", "overall_decomp")
    with_bias = bool(req.get("with_bias", False))
    if variant not in EXPLAIN_VARIANTS:
        raise VariantUnsupported(f"variant {variant!r} not supported by explain")
    if variant == "overall_decomp_bias":
        variant, with_bias = "overall_decomp", True

    d = _pair(ws, query_id, ref_id)
    if variant == "overall_decomp":
        q_map = overall_map(d, "query", with_bias)
        r_map = overall_map(d, "ref", with_bias)
    else:
        normalized = variant == "gradcam"
        q_map = gradcam_metric(
            ws.head(query_id), ws.trace(query_id).conv_feature,
            d.embedding_q, d.embedding_r, normalized=normalized,
        )
        r_map = gradcam_metric(
            ws.head(ref_id), ws.trace(ref_id).conv_feature,
            d.embedding_r, d.embedding_q, normalized=normalized,
        )
    qh, qw, _ = ws.image(query_id).shape
    rh, rw, _ = ws.image(ref_id).shape
    report = d.similarity()
    return {
        "S": report.S,
        "D": report.D,
        "overall_query": map_payload(q_map.resized(qh, qw)),
        "overall_ref": map_payload(r_map.resized(rh, rw)),
    }


def handle_point(ws: Workspace, req: dict) -> dict:
    query_id, ref_id = req["query_id"], req["ref_id"]
    side = req.get("side", "query")
    if side not in ("query", "ref"):
        raise VariantUnsupported(f"side must be 'query' or 'ref', got {side!r}")
    col, row = int(req["x"]), int(req["y"])

    clicked_id = query_id if side == "query" else ref_id
    h, w, _ = ws.image(clicked_id).shape
    if not (0 <= row < h and 0 <= col < w):
        raise PointOutOfRange(f"pixel ({col},{row}) outside image {w}x{h}")

    d = _pair(ws, query_id, ref_id)
    grid = d.query_grid if side == "query" else d.ref_grid
    cell = pixel_to_cell((row, col), (h, w), grid)
    pmap = point_specific_map(d, side, cell)
    return {
        "map": map_payload(pmap),
        "clicked_feature_cell": [int(cell[0]), int(cell[1])],
    }


def handle_retrieve(ws: Workspace, req: dict) -> dict:
    from .retrieval import (
        partial_feature,
        pixel_feature,
        query_norm,
        retrieve_overall,
        retrieve_partial,
    )

    query_id = req["query_id"]
    k = int(req.get("k", 10))
    roi = req.get("roi")
    trace = ws.trace(query_id)
    if roi:
        head = ws.head(query_id)
        A = trace.conv_feature
        h, w, _ = ws.image(query_id).shape
        pixels = [(int(p[1]), int(p[0])) for p in roi]  # payload [x, y] -> (row, col)
        if len(pixels) == 1:
            pf = pixel_feature(head, A, pixels[0], (h, w))
        else:
            m, n, _ = head.feature_shape
            cells = {pixel_to_cell(pix, (h, w), (m, n)) for pix in pixels}
            pf = partial_feature(head, A, cells)
        ranked = retrieve_partial(ws.index, pf, query_norm(head, A), k)
    else:
        ranked = retrieve_overall(ws.index, trace.embedding, k)
    return {
        "results": [
            {"id": rid, "similarity": sim, "image": f"/api/image/{rid}"}
            for rid, sim in ranked
        ]
    }


def render_png(tensor: np.ndarray) -> bytes:
    """Min-max render of an [h,w,c] tensor to PNG bytes.

    Three or more channels render as RGB (first three); anything else
    collapses to grayscale by channel mean.
    """
    from PIL import Image

    arr = tensor.astype(np.float64)
    lo, hi = float(arr.min()), float(arr.max())
    scaled = (arr - lo) / (hi - lo) * 255.0 if hi > lo else np.full_like(arr, 127.0)
    pix = np.clip(np.rint(scaled), 0, 255).astype(np.uint8)
    if pix.shape[2] >= 3:
        img = Image.fromarray(pix[:, :, :3])
    else:
        img = Image.fromarray(pix.mean(axis=2).astype(np.uint8))
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def create_app(ws: Workspace):
    """FastAPI app over a loaded workspace (CORS open for the local UI)."""
    app = FastAPI(title="metric-lens")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(MetricLensError)
    async def domain_error(request: Request, exc: MetricLensError):
        status = 404 if isinstance(exc, UnknownId) else 400
        return JSONResponse(status_code=status, content={"error": str(exc)})

    @app.get("/api/images")
    def list_images():
        return {
            "images": [
                {
                    "id": image_id,
                    "h": int(ws.images[image_id].shape[0]),
                    "w": int(ws.images[image_id].shape[1]),
                    "c": int(ws.images[image_id].shape[2]),
                }
                for image_id in ws.ids
            ]
        }

    @app.get("/api/image/{image_id}")
    def get_image(image_id: str):
        return Response(content=render_png(ws.image(image_id)), media_type="image/png")

    @app.post("/api/explain")
    async def explain(request: Request):
        return handle_explain(ws, await request.json())

    @app.post("/api/point")
    async def point(request: Request):
        return handle_point(ws, await request.json())

    @app.post("/api/retrieve")
    async def retrieve(request: Request):
        return handle_retrieve(ws, await request.json())

    return app


def serve(workspace_path, port: int = 8787) -> None:
    import uvicorn

    from .workspace import load_workspace

    app = create_app(load_workspace(workspace_path))
    uvicorn.run(app, host="127.0.0.1", port=port)
