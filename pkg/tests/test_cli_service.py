import json
import urllib.error
import urllib.request

import numpy as np
import pytest

import nvsurf.geometry as geometry
from nvsurf.cli import main, parse_model_config, parse_train_config
from nvsurf.dataset import SceneRecipe, generate_synthetic_scene, load_image
from nvsurf.pipeline import load_checkpoint
from nvsurf.service import (DEFAULT_PIXEL_BUDGET, RenderRequest, make_server,
                            model_info)

SMALL_CONFIG = {
    "model": {
        "main_encoding": {"levels": 4, "channels": 2, "table_size": 2 ** 12,
                          "coarsest": 4, "finest": 32},
        "gamma": 2,
        "lighting_count": 0,
    },
    "train": {"epochs": 2, "lr": 1e-3, "rays_per_batch": 64,
              "checkpoint_interval": 0},
}


@pytest.fixture(scope="module")
def scene(tmp_path_factory):
    root = tmp_path_factory.mktemp("scene")
    recipe = SceneRecipe(mesh_resolution=8, resolution=16, view_count=8,
                         supersampling=2)
    generate_synthetic_scene(recipe, 11, root)
    cfg_path = root / "config.json"
    cfg_path.write_text(json.dumps(SMALL_CONFIG))
    return root


@pytest.fixture(scope="module")
def trained(scene, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    rc = main(["train", "--manifest", str(scene / "manifest.json"),
               "--config", str(scene / "config.json"),
               "--out", str(out)])
    assert rc == 0
    return out


class TestConfigParsing:
    def test_partial_model_overrides(self):
        cfg = parse_model_config({"gamma": 3,
                                  "main_encoding": {"levels": 4,
                                                    "channels": 2}})
        assert cfg.gamma == 3
        assert cfg.main_encoding.levels == 4
        assert cfg.main_encoding.channels == 2
        # untouched fields keep their defaults
        assert cfg.main_encoding.table_size == 2 ** 16
        assert cfg.deformation is True

    def test_deform_encoding_follows_main_by_default(self):
        cfg = parse_model_config({"main_encoding": {"levels": 4,
                                                    "channels": 2}})
        assert cfg.deform_encoding.levels == 4
        assert cfg.deform_encoding.channels == 2

    def test_partial_train_overrides(self):
        cfg = parse_train_config({"epochs": 5, "lr": 0.5}, seed=9)
        assert cfg.epochs == 5 and cfg.lr == 0.5 and cfg.seed == 9
        assert cfg.rays_per_batch == 1024


class TestCacheCommand:
    def test_cache_writes_one_file_per_view(self, scene, tmp_path, capsys):
        rc = main(["cache", "--manifest", str(scene / "manifest.json"),
                   "--gamma", "2", "--out", str(tmp_path / "cache"),
                   "--config", str(scene / "config.json")])
        assert rc == 0
        files = sorted((tmp_path / "cache").glob("view_*.xzb"))
        assert len(files) == 8
        out = json.loads(capsys.readouterr().out)
        assert out["cached_views"] == 8

    def test_train_reuses_existing_cache(self, scene, tmp_path, capsys):
        cache_dir = tmp_path / "cache"
        assert main(["cache", "--manifest", str(scene / "manifest.json"),
                     "--gamma", "2", "--out", str(cache_dir),
                     "--config", str(scene / "config.json")]) == 0
        capsys.readouterr()
        before = geometry.RASTERIZE_CALLS
        rc = main(["train", "--manifest", str(scene / "manifest.json"),
                   "--config", str(scene / "config.json"),
                   "--cache-dir", str(cache_dir),
                   "--out", str(tmp_path / "run")])
        assert rc == 0
        assert geometry.RASTERIZE_CALLS == before   # no re-rasterization


class TestTrainCommand:
    def test_outputs_exist(self, trained):
        assert (trained / "checkpoint.xnvs").exists()
        assert (trained / "final.xnvs").exists()
        history = json.loads((trained / "loss_log.json").read_text())
        assert len(history) > 0
        assert all(np.isfinite(history))

    def test_zero_epoch_checkpoint_matches_fresh_model(self, scene, tmp_path):
        cfg = dict(SMALL_CONFIG)
        cfg["train"] = dict(SMALL_CONFIG["train"], epochs=0)
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(cfg))
        out = tmp_path / "run"
        assert main(["train", "--manifest", str(scene / "manifest.json"),
                     "--config", str(cfg_path), "--out", str(out)]) == 0
        from nvsurf.dataset import load_manifest
        from nvsurf.experiment import build_model
        manifest = load_manifest(scene / "manifest.json")
        fresh = build_model(manifest, parse_model_config(cfg["model"]))
        loaded = load_checkpoint(out / "checkpoint.xnvs")
        fresh_params = {g.name: g.value for g in fresh.param_groups()}
        for g in loaded.param_groups():
            np.testing.assert_array_equal(g.value, fresh_params[g.name])


class TestEvalCommand:
    def test_eval_reports_both_splits(self, scene, trained, capsys):
        rc = main(["eval", "--checkpoint", str(trained / "checkpoint.xnvs"),
                   "--manifest", str(scene / "manifest.json"),
                   "--split", "all"])
        assert rc == 0
        report = json.loads(capsys.readouterr().out)
        assert len(report["train"]["frames"]) == 6
        assert len(report["test"]["frames"]) == 2
        for split in ("train", "test"):
            assert np.isfinite(report[split]["mean_psnr"])
            assert -1.0 <= report[split]["mean_ssim"] <= 1.0

    def test_eval_single_split(self, scene, trained, capsys):
        rc = main(["eval", "--checkpoint", str(trained / "checkpoint.xnvs"),
                   "--manifest", str(scene / "manifest.json"),
                   "--split", "test"])
        assert rc == 0
        report = json.loads(capsys.readouterr().out)
        assert "train" not in report and "test" in report


def pose_doc(scene, **overrides):
    manifest = json.loads((scene / "manifest.json").read_text())
    fr = manifest["frames"][0]
    doc = {"camera_to_world": fr["camera_to_world"],
           "fx": fr["fx"], "fy": fr["fy"], "cx": fr["cx"], "cy": fr["cy"],
           "width": fr["w"], "height": fr["h"]}
    doc.update(overrides)
    return doc


class TestRenderCommand:
    def test_renders_pose_list(self, scene, trained, tmp_path, capsys):
        poses = [pose_doc(scene),
                 pose_doc(scene, width=8, height=8, cx=4.0, cy=4.0)]
        pose_path = tmp_path / "poses.json"
        pose_path.write_text(json.dumps(poses))
        out = tmp_path / "frames"
        rc = main(["render", "--checkpoint", str(trained / "checkpoint.xnvs"),
                   "--poses", str(pose_path), "--out", str(out)])
        assert rc == 0
        img0 = load_image(out / "frame_0000.png")
        img1 = load_image(out / "frame_0001.png")
        assert img0.shape == (16, 16, 3)
        assert img1.shape == (8, 8, 3)

    def test_bad_pose_names_index(self, scene, trained, tmp_path, capsys):
        poses = [pose_doc(scene), {"fx": 1.0}]
        pose_path = tmp_path / "poses.json"
        pose_path.write_text(json.dumps(poses))
        rc = main(["render", "--checkpoint", str(trained / "checkpoint.xnvs"),
                   "--poses", str(pose_path), "--out", str(tmp_path / "o")])
        assert rc == 1
        err = json.loads(capsys.readouterr().err)
        assert "pose 1" in err["message"]


class TestErrorReporting:
    def test_missing_manifest_exit_code_and_json_stderr(self, capsys):
        rc = main(["train", "--manifest", "/nonexistent/manifest.json",
                   "--out", "/tmp/nvsurf-nope"])
        assert rc == 1
        captured = capsys.readouterr().err.strip()
        assert len(captured.splitlines()) == 1
        err = json.loads(captured)
        assert "error" in err and "message" in err

    def test_bad_checkpoint_reported(self, scene, tmp_path, capsys):
        bad = tmp_path / "bad.xnvs"
        bad.write_bytes(b"JUNKJUNK")
        rc = main(["eval", "--checkpoint", str(bad),
                   "--manifest", str(scene / "manifest.json")])
        assert rc == 1
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "CheckpointFormatError"


# ---------------------------------------------------------------------------
# HTTP service

@pytest.fixture(scope="module")
def server(trained):
    model = load_checkpoint(trained / "checkpoint.xnvs")
    srv = make_server(model, 0)
    import threading
    threading.Thread(target=srv.serve_forever, daemon=True).start()
    yield f"http://127.0.0.1:{srv.server_address[1]}", model
    srv.shutdown()


def get(url):
    with urllib.request.urlopen(url, timeout=10) as resp:
        return resp.status, resp.read(), resp.headers.get("Content-Type")


def post(url, doc):
    req = urllib.request.Request(url, data=json.dumps(doc).encode(),
                                 headers={"Content-Type": "application/json"})
    try:
        with urllib.request.urlopen(req, timeout=30) as resp:
            return resp.status, resp.read(), resp.headers.get("Content-Type")
    except urllib.error.HTTPError as exc:
        return exc.code, exc.read(), exc.headers.get("Content-Type")


class TestService:
    def test_healthz(self, server):
        base, _ = server
        status, body, _ = get(base + "/healthz")
        assert status == 200 and body == b"ok"

    def test_info(self, server, scene):
        base, model = server
        status, body, ctype = get(base + "/info")
        assert status == 200 and ctype == "application/json"
        info = json.loads(body)
        assert info == model_info(model)
        assert info["pixel_budget"] == DEFAULT_PIXEL_BUDGET
        assert "lighting_count" in info and "appearance_count" in info

    def test_unknown_endpoint_404(self, server):
        base, _ = server
        try:
            urllib.request.urlopen(base + "/nope", timeout=10)
            assert False, "expected 404"
        except urllib.error.HTTPError as exc:
            assert exc.code == 404

    def test_render_returns_png(self, server, scene):
        base, _ = server
        status, body, ctype = post(base + "/render", pose_doc(scene))
        assert status == 200 and ctype == "image/png"
        assert body[:8] == b"\x89PNG\r\n\x1a\n"

    def test_render_matches_direct_call(self, server, scene, tmp_path):
        import io
        from PIL import Image
        from nvsurf.service import render_request
        base, model = server
        doc = pose_doc(scene)
        _, body, _ = post(base + "/render", doc)
        served = np.asarray(Image.open(io.BytesIO(body)), dtype=np.float64)
        direct = render_request(model, RenderRequest.from_dict(doc))
        direct8 = np.round(np.clip(direct, 0, 1) * 255.0)
        np.testing.assert_array_equal(served, direct8)

    def test_missing_field_400(self, server, scene):
        base, _ = server
        doc = pose_doc(scene)
        del doc["fx"]
        status, body, _ = post(base + "/render", doc)
        assert status == 400
        assert "fx" in json.loads(body)["error"]

    def test_bad_tau_400(self, server, scene):
        base, _ = server
        doc = pose_doc(scene, lighting={"i": 0, "j": 0, "tau": 2.0})
        status, body, _ = post(base + "/render", doc)
        assert status == 400
        assert "tau" in json.loads(body)["error"]

    def test_over_budget_413(self, server, scene):
        base, _ = server
        doc = pose_doc(scene, width=2000, height=2000)
        status, body, _ = post(base + "/render", doc)
        assert status == 413

    def test_bad_gamma_400(self, server, scene):
        base, _ = server
        status, body, _ = post(base + "/render", pose_doc(scene, gamma=0))
        assert status == 400

    def test_malformed_json_400(self, server):
        base, _ = server
        req = urllib.request.Request(
            base + "/render", data=b"{oops",
            headers={"Content-Type": "application/json"})
        try:
            urllib.request.urlopen(req, timeout=10)
            assert False, "expected 400"
        except urllib.error.HTTPError as exc:
            assert exc.code == 400


class TestRenderRequestValidation:
    def base_doc(self):
        return {"camera_to_world": list(np.eye(4).reshape(-1)),
                "fx": 10.0, "fy": 10.0, "cx": 4.0, "cy": 4.0,
                "width": 8, "height": 8}

    def test_valid(self):
        req = RenderRequest.from_dict(self.base_doc())
        assert req.camera().width == 8

    def test_missing_fields_listed(self):
        with pytest.raises(ValueError, match="fx"):
            RenderRequest.from_dict({"width": 8})

    def test_short_matrix(self):
        doc = self.base_doc()
        doc["camera_to_world"] = [1.0] * 9
        with pytest.raises(ValueError, match="16"):
            RenderRequest.from_dict(doc)

    def test_nonpositive_dims(self):
        doc = self.base_doc()
        doc["height"] = 0
        with pytest.raises(ValueError):
            RenderRequest.from_dict(doc)

    def test_tau_boundaries(self):
        doc = self.base_doc()
        doc["lighting"] = {"i": 0, "j": 1, "tau": 0.0}
        assert RenderRequest.from_dict(doc).lighting == (0, 1, 0.0)
        doc["lighting"]["tau"] = 1.0
        with pytest.raises(ValueError):
            RenderRequest.from_dict(doc)
