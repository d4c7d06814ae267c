"""Command-line surface: every pipeline reachable without the UI.

Subcommands: similarity, explain, point, localize, orient, index build,
index query, ingest, serve. Exit codes: 0 success, 1 domain error, 2 usage
error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .decompose import decompose_pair, overall_map, pixel_to_cell, point_specific_map
from .errors import MetricLensError
from .evaluate import (
    BBox,
    angle_error_histogram,
    estimate_orientation,
    iou,
    segment_and_box,
    wrap_angle_error,
)
from .gradcam import gradcam_metric
from .linearize import linearize_head
from .nn import ModelManifest, forward
from .tensor import read_tensor, write_pgm, write_tensor

MAP_CHOICES = ("decomposition", "decomposition_bias", "gradcam", "gradcam_nonorm")


def _load_pair(args):
    model = ModelManifest.load(args.model)
    q = read_tensor(args.query)
    r = read_tensor(args.ref)
    trace_q = forward(model, q)
    trace_r = forward(model, r)
    head_q = linearize_head(model, trace_q)
    head_r = linearize_head(model, trace_r)
    d = decompose_pair(head_q, trace_q.conv_feature, head_r, trace_r.conv_feature)
    return model, (q, r), (trace_q, trace_r), (head_q, head_r), d


def _variant_maps(variant, d, traces, heads):
    if variant in ("decomposition", "decomposition_bias"):
        with_bias = variant == "decomposition_bias"
        return overall_map(d, "query", with_bias), overall_map(d, "ref", with_bias)
    normalized = variant == "gradcam"
    q_map = gradcam_metric(
        heads[0], traces[0].conv_feature, d.embedding_q, d.embedding_r, normalized
    )
    r_map = gradcam_metric(
        heads[1], traces[1].conv_feature, d.embedding_r, d.embedding_q, normalized
    )
    return q_map, r_map


def cmd_similarity(args) -> int:
    _, _, _, _, d = _load_pair(args)
    report = d.similarity()
    print(json.dumps({"S": report.S, "D": report.D}))
    return 0


def _dump_map(amap, out_dir: Path, stem: str) -> None:
    write_tensor(amap.values, out_dir / f"{stem}.tnsr")
    write_pgm(amap.values, out_dir / f"{stem}.pgm")


def cmd_explain(args) -> int:
    _, images, traces, heads, d = _load_pair(args)
    q_map, r_map = _variant_maps(args.variant, d, traces, heads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    qh, qw, _ = images[0].shape
    rh, rw, _ = images[1].shape
    _dump_map(q_map.resized(qh, qw), out, "query_map")
    _dump_map(r_map.resized(rh, rw), out, "ref_map")
    report = d.similarity()
    with open(out / "similarity.json", "w", encoding="utf-8") as fh:
        json.dump({"S": report.S, "D": report.D}, fh)
    print(f"wrote maps to {out}")
    return 0


def cmd_point(args) -> int:
    _, images, _, _, d = _load_pair(args)
    side = args.side
    clicked = images[0] if side == "query" else images[1]
    h, w, _ = clicked.shape
    grid = d.query_grid if side == "query" else d.ref_grid
    cell = pixel_to_cell((args.y, args.x), (h, w), grid)
    other = images[1] if side == "query" else images[0]
    pmap = point_specific_map(d, side, cell, target_resolution=other.shape[:2])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _dump_map(pmap, out, "point_map")
    print(json.dumps({"clicked_feature_cell": list(cell)}))
    return 0


def _read_dataset(path):
    base = Path(path).parent
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                entries.append((json.loads(line), base))
    return entries


def cmd_localize(args) -> int:
    model = ModelManifest.load(args.model)
    thresholds = [float(t) for t in args.thresholds.split(",") if t]
    rows = []
    entries = _read_dataset(args.dataset)
    pairs = []
    for doc, base in entries:
        q = read_tensor(base / doc["query"])
        r = read_tensor(base / doc["ref"])
        trace_q, trace_r = forward(model, q), forward(model, r)
        head_q, head_r = linearize_head(model, trace_q), linearize_head(model, trace_r)
        d = decompose_pair(head_q, trace_q.conv_feature, head_r, trace_r.conv_feature)
        q_map, _ = _variant_maps(args.variant, d, (trace_q, trace_r), (head_q, head_r))
        gt = BBox(*doc["gt_box"])
        pairs.append((q_map, gt, q.shape[:2]))
    for t in thresholds:
        hits = 0
        for amap, gt, (h, w) in pairs:
            try:
                pred = segment_and_box(amap, t, h, w)
            except MetricLensError:
                continue
            if iou(pred, gt) > 0.5:
                hits += 1
        rows.append((t, hits / len(pairs) if pairs else 0.0))
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        out.write("threshold,accuracy\n")
        for t, acc in rows:
            out.write(f"{t},{acc}\n")
    finally:
        if args.out:
            out.close()
    return 0


def cmd_orient(args) -> int:
    model = ModelManifest.load(args.model)
    errors = []
    lines = ["pair,gt_rotation_deg,estimate_deg,error_deg"]
    for idx, (doc, base) in enumerate(_read_dataset(args.dataset)):
        street = read_tensor(base / doc["query"])
        aerial = read_tensor(base / doc["ref"])
        trace_s, trace_a = forward(model, street), forward(model, aerial)
        head_s, head_a = linearize_head(model, trace_s), linearize_head(model, trace_a)
        d = decompose_pair(head_s, trace_s.conv_feature, head_a, trace_a.conv_feature)
        s_map = overall_map(d, "query", with_bias=False).resized(*street.shape[:2])
        a_map = overall_map(d, "ref", with_bias=False).resized(*aerial.shape[:2])
        est = estimate_orientation(s_map, a_map, args.mode, d)
        gt = float(doc["gt_rotation_deg"])
        err = wrap_angle_error(gt, est)
        errors.append(err)
        lines.append(f"{idx},{gt},{float(est)},{err}")
    print("\n".join(lines))
    if args.hist:
        centers, fracs = angle_error_histogram(errors)
        with open(args.hist, "w", encoding="utf-8") as fh:
            fh.write("bin_center_deg,fraction\n")
            for c, f in zip(centers, fracs):
                fh.write(f"{c},{f}\n")
    return 0


def cmd_index_build(args) -> int:
    from .retrieval import build_index, save_index

    model = ModelManifest.load(args.model)
    images_dir = Path(args.images)
    paths = sorted(images_dir.glob("*.tnsr"))
    index, failures = build_index(model, paths)
    save_index(index, args.out)
    for image_id, reason in failures:
        print(f"skipped {image_id}: {reason}", file=sys.stderr)
    print(f"indexed {len(index)} images -> {args.out}")
    return 0


def cmd_index_query(args) -> int:
    from .retrieval import (
        load_index,
        partial_feature,
        pixel_feature,
        query_norm,
        retrieve_overall,
        retrieve_partial,
    )

    index = load_index(args.index)
    model = ModelManifest.load(args.model)
    q = read_tensor(args.query)
    trace = forward(model, q)
    if args.roi or args.pixel:
        head = linearize_head(model, trace)
        if args.pixel:
            x, y = (int(v) for v in args.pixel.split(","))
            pf = pixel_feature(head, trace.conv_feature, (y, x), q.shape[:2])
        else:
            cells = []
            for chunk in args.roi.split(";"):
                i, j = (int(v) for v in chunk.split(","))
                cells.append((i, j))
            pf = partial_feature(head, trace.conv_feature, cells)
        ranked = retrieve_partial(index, pf, query_norm(head, trace.conv_feature), args.k)
    else:
        ranked = retrieve_overall(index, trace.embedding, args.k)
    print("rank,id,similarity")
    for pos, (rid, sim) in enumerate(ranked, 1):
        print(f"{pos},{rid},{sim}")
    return 0


def cmd_ingest(args) -> int:
    from PIL import Image

    model = ModelManifest.load(args.model)
    h, w, c = model.input_shape
    img = Image.open(args.image)
    img = img.convert("RGB" if c == 3 else "L").resize((w, h), Image.BILINEAR)
    arr = np.asarray(img, dtype=np.float32) / 255.0
    if arr.ndim == 2:
        # replicate grayscale across however many channels the model expects
        arr = np.repeat(arr[:, :, None], c, axis=2)
    pre = model.preprocess or {}
    mean = np.asarray(pre.get("mean", [0.0] * c), dtype=np.float32)
    std = np.asarray(pre.get("std", [1.0] * c), dtype=np.float32)
    write_tensor((arr - mean) / std, args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_serve(args) -> int:
    import os

    from .service import serve

    workspace = args.workspace or os.environ.get("METRIC_LENS_WORKSPACE")
    if not workspace:
        print("no workspace: pass --workspace or set METRIC_LENS_WORKSPACE", file=sys.stderr)
        return 2
    serve(workspace, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="metric-lens",
        description="Activation decomposition explanations for metric-learning models",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def pair_args(p):
        p.add_argument("--model", required=True, help="model manifest JSON")
        p.add_argument("--query", required=True, help="query tensor (.tnsr)")
        p.add_argument("--ref", required=True, help="reference tensor (.tnsr)")

    p = sub.add_parser("similarity", help="cosine similarity of a pair")
    pair_args(p)
    p.set_defaults(func=cmd_similarity)

    p = sub.add_parser("explain", help="overall activation maps for a pair")
    pair_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--variant", choices=MAP_CHOICES, default="decomposition")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("point", help="point-specific map for a clicked pixel")
    pair_args(p)
    p.add_argument("--x", type=int, required=True, help="pixel column")
    p.add_argument("--y", type=int, required=True, help="pixel row")
    p.add_argument("--side", choices=("query", "ref"), default="query")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_point)

    p = sub.add_parser("localize", help="threshold sweep localization accuracy")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True, help="JSONL with query/ref/gt_box")
    p.add_argument("--thresholds", default="0.15,0.2,0.3,0.4,0.5,0.6,0.7")
    p.add_argument("--variant", choices=MAP_CHOICES, default="decomposition")
    p.add_argument("--out", default=None, help="CSV path (default stdout)")
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("orient", help="cross-view orientation estimation")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True, help="JSONL with query/ref/gt_rotation_deg")
    p.add_argument("--mode", choices=("overall", "point_specific"), default="point_specific")
    p.add_argument("--hist", default=None, help="write angle-error histogram CSV here")
    p.set_defaults(func=cmd_orient)

    p = sub.add_parser("index", help="embedding index operations")
    isub = p.add_subparsers(dest="index_command", required=True)
    b = isub.add_parser("build")
    b.add_argument("--model", required=True)
    b.add_argument("--images", required=True, help="directory of .tnsr images")
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_index_build)
    qp = isub.add_parser("query")
    qp.add_argument("--index", required=True)
    qp.add_argument("--model", required=True)
    qp.add_argument("--query", required=True)
    qp.add_argument("--roi", default=None, help="feature cells 'i,j;i,j;...'")
    qp.add_argument("--pixel", default=None, help="single pixel 'x,y'")
    qp.add_argument("-k", type=int, default=10)
    qp.set_defaults(func=cmd_index_query)

    p = sub.add_parser("ingest", help="convert PNG/JPEG to a preprocessed tensor")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("serve", help="start the HTTP service")
    p.add_argument("--workspace", default=None)
    p.add_argument("--port", type=int, default=8787)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        return args.func(args)
    except MetricLensError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
