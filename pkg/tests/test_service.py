import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from convad.masks import full_mask, write_pgm_mask, write_rle_json
from convad.service.app import create_app
from convad import zoo

F32 = np.float32


@pytest.fixture(scope="module")
def env(tmp_path_factory):
    root = tmp_path_factory.mktemp("svc")
    manifest, blob = zoo.export_model("bright_square", root / "model",
                                      input_shape=(1, 16, 16))
    zoo.make_dataset(root / "data", count=2, size=16, seed=0)
    image = root / "data" / "img000.png"
    mask = full_mask(16, 16)
    mask[8:, :] = 0.0
    write_pgm_mask(root / "mask.pgm", mask)
    write_rle_json(root / "mask.json", mask)
    return root, str(manifest), str(blob), str(image)


@pytest.fixture(scope="module")
def client(env):
    return TestClient(create_app())


@pytest.fixture(scope="module")
def model_id(client, env):
    _, manifest, blob, _ = env
    resp = client.post("/models", json={"manifest_path": manifest,
                                        "blob_path": blob})
    assert resp.status_code == 200
    return resp.json()["model_id"]


class TestRegistry:
    def test_healthz(self, client):
        assert client.get("/healthz").json() == {"status": "ok"}

    def test_load_reports_structure(self, client, env, model_id):
        info = client.get(f"/models/{model_id}").json()
        assert info["input_shape"] == [1, 16, 16]
        assert info["labels"] == ["dark", "bright_square"]
        assert info["layer_kinds"] == ["conv", "relu", "flatten", "dense",
                                       "softmax"]
        assert info["checkpoints"] == [1, 2]

    def test_listing(self, client, model_id):
        ids = [m["model_id"] for m in client.get("/models").json()]
        assert model_id in ids

    def test_unknown_model_404(self, client):
        assert client.get("/models/doesnotexist").status_code == 404

    def test_bad_manifest_422(self, client, tmp_path_factory):
        root = tmp_path_factory.mktemp("bad")
        bad = root / "m.json"
        bad.write_text("{}")
        (root / "m.adw").write_bytes(b"ADW1")
        resp = client.post("/models", json={"manifest_path": str(bad),
                                            "blob_path": str(root / "m.adw")})
        assert resp.status_code == 422


class TestInfer:
    def test_plain(self, client, env, model_id):
        _, _, _, image = env
        resp = client.post(f"/models/{model_id}/infer",
                           json={"image_path": image, "mode": "plain"})
        assert resp.status_code == 200
        body = resp.json()
        assert body["predictions"][0]["label"] == "bright_square"
        assert abs(sum(body["scores"]) - 1.0) < 1e-5

    @pytest.mark.parametrize("mask_name", ["mask.pgm", "mask.json"])
    def test_ad_accepts_both_mask_formats(self, client, env, model_id,
                                          mask_name):
        root, _, _, image = env
        resp = client.post(f"/models/{model_id}/infer",
                           json={"image_path": image, "mode": "ad",
                                 "mask_path": str(root / mask_name),
                                 "tau": 0.0})
        assert resp.status_code == 200
        assert resp.json()["predictions"][0]["label"] == "bright_square"

    def test_occlusion_policy(self, client, env, model_id):
        root, _, _, image = env
        resp = client.post(f"/models/{model_id}/infer",
                           json={"image_path": image, "mode": "occlusion",
                                 "mask_path": str(root / "mask.pgm"),
                                 "policy": "min"})
        assert resp.status_code == 200

    def test_missing_image_422(self, client, env, model_id):
        resp = client.post(f"/models/{model_id}/infer",
                           json={"image_path": "/nope.png", "mode": "plain"})
        assert resp.status_code == 422

    def test_ad_and_plain_agree_under_full_mask(self, client, env, model_id,
                                                tmp_path):
        root, _, _, image = env
        full = tmp_path / "full.pgm"
        write_pgm_mask(full, full_mask(16, 16))
        plain = client.post(f"/models/{model_id}/infer",
                            json={"image_path": image, "mode": "plain"}).json()
        ad = client.post(f"/models/{model_id}/infer",
                         json={"image_path": image, "mode": "ad",
                               "mask_path": str(full)}).json()
        np.testing.assert_allclose(plain["scores"], ad["scores"], atol=1e-6)


class TestExplainEndpoint:
    def test_explain_writes_artifacts(self, client, env, model_id, tmp_path):
        _, _, _, image = env
        prefix = tmp_path / "expl" / "e1"
        resp = client.post(f"/models/{model_id}/explain",
                           json={"image_path": image, "engine": "zero",
                                 "gamma": 0.5, "seed": 3, "iterations": 3,
                                 "out_prefix": str(prefix)})
        assert resp.status_code == 200
        body = resp.json()
        assert body["label"] == "bright_square"
        assert 0.0 < body["size_fraction"] < 1.0
        meta = json.loads(open(body["sidecar_path"]).read())
        assert meta["gamma"] == 0.5

    def test_bad_engine_422(self, client, env, model_id):
        _, _, _, image = env
        resp = client.post(f"/models/{model_id}/explain",
                           json={"image_path": image, "engine": "shap",
                                 "gamma": 0.5, "seed": 0})
        assert resp.status_code == 422


class TestEvaluateEndpoint:
    def test_small_run(self, client, env, model_id, tmp_path):
        root, _, _, _ = env
        out = tmp_path / "eval"
        resp = client.post(f"/models/{model_id}/evaluate",
                           json={"dataset_dir": str(root / "data"),
                                 "engines": ["zero"], "gammas": [0.5],
                                 "backgrounds": 5, "seed": 0,
                                 "iterations": 2, "out_dir": str(out)})
        assert resp.status_code == 200
        body = resp.json()
        assert len(body["rows"]) == 1
        assert body["rows"][0]["n"] == 2
        assert (out / "report.csv").exists()


class TestVerifyEndpoint:
    def test_verify_passes(self, client, model_id):
        resp = client.post(f"/models/{model_id}/verify",
                           json={"trials": 5, "taus": [0.0, 0.49], "seed": 0,
                                 "tolerance": 1e-5})
        assert resp.status_code == 200
        body = resp.json()
        assert body["passed"] is True
        assert body["max_deviation"] <= 1e-5
