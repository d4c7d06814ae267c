"""HTTP service: endpoints, error codes, determinism."""

import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from conftest import make_image, make_model
from metric_lens.decompose import decompose_pair, overall_map, pixel_to_cell
from metric_lens.linearize import linearize_head
from metric_lens.nn import forward
from metric_lens.service import create_app
from metric_lens.tensor import write_tensor
from metric_lens.workspace import load_workspace


def build_workspace(tmp_path, head="flatten_fc", with_bias=False, count=4, seed=200):
    model = make_model(head, seed=seed, with_bias=with_bias)
    ws_dir = tmp_path / "ws"
    (ws_dir / "tensors").mkdir(parents=True)
    model.save(ws_dir / "model")
    for i in range(count):
        write_tensor(make_image(model, seed * 10 + i), ws_dir / "tensors" / f"img{i}.tnsr")
    config = {"model": "model/model.json", "images": "tensors"}
    (ws_dir / "workspace.json").write_text(json.dumps(config))
    return ws_dir / "workspace.json"


@pytest.fixture(scope="module")
def client(tmp_path_factory):
    path = build_workspace(tmp_path_factory.mktemp("svc"))
    ws = load_workspace(path)
    return TestClient(create_app(ws)), ws


class TestImages:
    def test_listing(self, client):
        cli, ws = client
        resp = cli.get("/api/images")
        assert resp.status_code == 200
        images = resp.json()["images"]
        assert [e["id"] for e in images] == ws.ids
        h, w, c = ws.images[ws.ids[0]].shape
        assert images[0] == {"id": ws.ids[0], "h": h, "w": w, "c": c}

    def test_image_bytes_are_png(self, client):
        cli, ws = client
        resp = cli.get(f"/api/image/{ws.ids[0]}")
        assert resp.status_code == 200
        assert resp.headers["content-type"] == "image/png"
        assert resp.content[:8] == b"\x89PNG\r\n\x1a\n"

    def test_unknown_image_404(self, client):
        cli, _ = client
        assert cli.get("/api/image/nope").status_code == 404


class TestExplain:
    def test_self_pair_similarity_is_one(self, client):
        cli, ws = client
        body = {"query_id": ws.ids[0], "ref_id": ws.ids[0], "variant": "overall_decomp"}
        doc = cli.post("/api/explain", json=body).json()
        assert doc["S"] == pytest.approx(1.0, abs=1e-6)
        assert doc["D"] == pytest.approx(2.0 - 2.0 * doc["S"], abs=1e-6)

    def test_maps_upsampled_to_image_dims(self, client):
        cli, ws = client
        body = {"query_id": ws.ids[0], "ref_id": ws.ids[1]}
        doc = cli.post("/api/explain", json=body).json()
        h, w, _ = ws.images[ws.ids[0]].shape
        payload = doc["overall_query"]
        assert (payload["h"], payload["w"]) == (h, w)
        assert len(payload["values"]) == h * w
        assert payload["min"] == min(payload["values"])
        assert payload["max"] == max(payload["values"])

    def test_matches_library_similarity(self, client):
        cli, ws = client
        q, r = ws.ids[1], ws.ids[2]
        doc = cli.post("/api/explain", json={"query_id": q, "ref_id": r}).json()
        d = decompose_pair(
            ws.heads[q], ws.traces[q].conv_feature, ws.heads[r], ws.traces[r].conv_feature
        )
        assert doc["S"] == pytest.approx(d.similarity().S, abs=1e-9)

    @pytest.mark.parametrize("variant", ["gradcam", "gradcam_nonorm", "overall_decomp_bias"])
    def test_other_variants_run(self, client, variant):
        cli, ws = client
        body = {"query_id": ws.ids[0], "ref_id": ws.ids[1], "variant": variant}
        assert cli.post("/api/explain", json=body).status_code == 200

    def test_unknown_id_is_404(self, client):
        cli, ws = client
        body = {"query_id": "missing", "ref_id": ws.ids[0]}
        assert cli.post("/api/explain", json=body).status_code == 404

    def test_unsupported_variant_is_400(self, client):
        cli, ws = client
        body = {"query_id": ws.ids[0], "ref_id": ws.ids[1], "variant": "cam"}
        assert cli.post("/api/explain", json=body).status_code == 400

    def test_replay_is_byte_identical(self, client):
        cli, ws = client
        body = {"query_id": ws.ids[0], "ref_id": ws.ids[1], "variant": "overall_decomp"}
        first = cli.post("/api/explain", json=body)
        second = cli.post("/api/explain", json=body)
        assert first.content == second.content


class TestPoint:
    def test_point_map_sums_to_overall_cell_value(self, client):
        cli, ws = client
        q, r = ws.ids[0], ws.ids[1]
        h, w, _ = ws.images[q].shape
        body = {"query_id": q, "ref_id": r, "x": w // 2, "y": h // 2, "side": "query"}
        doc = cli.post("/api/point", json=body).json()
        d = decompose_pair(
            ws.heads[q], ws.traces[q].conv_feature, ws.heads[r], ws.traces[r].conv_feature
        )
        cell = pixel_to_cell((h // 2, w // 2), (h, w), d.query_grid)
        assert doc["clicked_feature_cell"] == list(cell)
        omap = overall_map(d, "query", with_bias=False)
        assert sum(doc["map"]["values"]) == pytest.approx(float(omap.values[cell]), abs=1e-5)

    def test_map_covers_other_image_feature_grid(self, client):
        cli, ws = client
        q, r = ws.ids[0], ws.ids[1]
        body = {"query_id": q, "ref_id": r, "x": 0, "y": 0, "side": "query"}
        doc = cli.post("/api/point", json=body).json()
        X, Y = ws.traces[r].conv_feature.shape[:2]
        assert (doc["map"]["h"], doc["map"]["w"]) == (X, Y)

    def test_same_cell_clicks_identical(self, client):
        cli, ws = client
        q, r = ws.ids[0], ws.ids[1]
        # rows 3 and 4 of the 5-tall image both quantize to feature row 2
        a = cli.post("/api/point", json={"query_id": q, "ref_id": r, "x": 0, "y": 3})
        b = cli.post("/api/point", json={"query_id": q, "ref_id": r, "x": 0, "y": 4})
        assert a.json()["clicked_feature_cell"] == b.json()["clicked_feature_cell"]
        assert a.content == b.content

    def test_click_outside_image_is_400(self, client):
        cli, ws = client
        body = {"query_id": ws.ids[0], "ref_id": ws.ids[1], "x": 9999, "y": 0}
        assert cli.post("/api/point", json=body).status_code == 400

    def test_ref_side_click(self, client):
        cli, ws = client
        q, r = ws.ids[0], ws.ids[1]
        body = {"query_id": q, "ref_id": r, "x": 0, "y": 0, "side": "ref"}
        doc = cli.post("/api/point", json=body).json()
        m, n = ws.traces[q].conv_feature.shape[:2]
        assert (doc["map"]["h"], doc["map"]["w"]) == (m, n)


class TestRetrieve:
    def test_null_roi_returns_self_first(self, client):
        cli, ws = client
        doc = cli.post(
            "/api/retrieve", json={"query_id": ws.ids[2], "roi": None, "k": 3}
        ).json()
        assert doc["results"][0]["id"] == ws.ids[2]
        assert doc["results"][0]["similarity"] == pytest.approx(1.0, abs=1e-6)
        assert doc["results"][0]["image"] == f"/api/image/{ws.ids[2]}"

    def test_whole_image_roi_matches_overall_order(self, client):
        # zero-bias workspace fixture: full-coverage RoI reduces to overall
        cli, ws = client
        q = ws.ids[0]
        h, w, _ = ws.images[q].shape
        roi = [[x, y] for y in range(0, h) for x in range(0, w)]
        interactive = cli.post(
            "/api/retrieve", json={"query_id": q, "roi": roi, "k": len(ws.ids)}
        ).json()
        overall = cli.post(
            "/api/retrieve", json={"query_id": q, "roi": None, "k": len(ws.ids)}
        ).json()
        assert [e["id"] for e in interactive["results"]] == [
            e["id"] for e in overall["results"]
        ]

    def test_k_larger_than_index_clamps(self, client):
        cli, ws = client
        doc = cli.post(
            "/api/retrieve", json={"query_id": ws.ids[0], "roi": None, "k": 999}
        ).json()
        assert len(doc["results"]) == len(ws.ids)

    def test_single_pixel_roi(self, client):
        cli, ws = client
        doc = cli.post(
            "/api/retrieve", json={"query_id": ws.ids[0], "roi": [[2, 2]], "k": 2}
        ).json()
        assert len(doc["results"]) == 2
