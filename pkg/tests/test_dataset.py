import json

import numpy as np
import pytest

from nvsurf.dataset import (Frame, SceneManifest, SceneRecipe,
                            analytic_albedo, analytic_shade,
                            generate_synthetic_scene, load_image,
                            load_manifest, make_shape, reference_render,
                            save_image, save_manifest, split_train_test,
                            synthetic_cameras)
from nvsurf.errors import ConfigurationError, NvsurfError
from nvsurf.geometry import Camera


def make_frames(n):
    cam = Camera(10.0, 10.0, 4.0, 4.0, 8, 8, np.eye(4))
    return [Frame(f"images/f{i}.png", cam) for i in range(n)]


class TestSplit:
    def test_every_seventh_held_out(self):
        m = SceneManifest("mesh.obj", make_frames(14))
        train, test = split_train_test(m)
        assert len(test) == 2 and len(train) == 12
        assert test[0].file_path == "images/f0.png"
        assert test[1].file_path == "images/f7.png"

    def test_seven_frames(self):
        train, test = split_train_test(SceneManifest("m.obj", make_frames(7)))
        assert len(test) == 1 and len(train) == 6

    def test_hundred_frames(self):
        train, test = split_train_test(
            SceneManifest("m.obj", make_frames(100)))
        assert len(test) == 15 and len(train) == 85

    def test_single_frame_warns_empty_train(self):
        with pytest.warns(UserWarning):
            train, test = split_train_test(
                SceneManifest("m.obj", make_frames(1)))
        assert len(train) == 0 and len(test) == 1


class TestManifestIO:
    def write_scene(self, tmp_path, mutate=None):
        recipe = SceneRecipe(mesh_resolution=6, resolution=8, view_count=3,
                             supersampling=1)
        generate_synthetic_scene(recipe, 0, tmp_path)
        if mutate:
            doc = json.loads((tmp_path / "manifest.json").read_text())
            mutate(doc)
            (tmp_path / "manifest.json").write_text(json.dumps(doc))
        return tmp_path / "manifest.json"

    def test_round_trip(self, tmp_path):
        path = self.write_scene(tmp_path)
        m = load_manifest(path)
        assert len(m.frames) == 3
        assert m.resolved_mesh_path.exists()
        for fr in m.frames:
            assert m.image_path(fr).exists()
        m2_path = tmp_path / "copy.json"
        save_manifest(m2_path, m)
        m2 = load_manifest(m2_path)
        for a, b in zip(m.frames, m2.frames):
            np.testing.assert_allclose(a.camera.camera_to_world,
                                       b.camera.camera_to_world)
            assert (a.camera.fx, a.camera.width) == (b.camera.fx,
                                                     b.camera.width)

    def test_missing_mesh_rejected(self, tmp_path):
        def mutate(doc):
            doc["mesh"] = "nope.obj"
        path = self.write_scene(tmp_path, mutate)
        with pytest.raises(NvsurfError):
            load_manifest(path)

    def test_missing_image_rejected(self, tmp_path):
        def mutate(doc):
            doc["frames"][1]["file_path"] = "images/missing.png"
        path = self.write_scene(tmp_path, mutate)
        with pytest.raises(NvsurfError):
            load_manifest(path)

    def test_bad_rotation_rejected(self, tmp_path):
        def mutate(doc):
            doc["frames"][0]["camera_to_world"][0] = 5.0
        path = self.write_scene(tmp_path, mutate)
        with pytest.raises(NvsurfError):
            load_manifest(path)

    def test_short_pose_rejected(self, tmp_path):
        def mutate(doc):
            doc["frames"][0]["camera_to_world"] = [1.0] * 12
        path = self.write_scene(tmp_path, mutate)
        with pytest.raises(NvsurfError):
            load_manifest(path)

    def test_unreadable_manifest(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        with pytest.raises(NvsurfError):
            load_manifest(bad)


class TestImageIO:
    def test_png_round_trip_quantized(self, tmp_path):
        rng = np.random.default_rng(0)
        img = rng.uniform(0, 1, size=(6, 5, 3))
        path = tmp_path / "x.png"
        save_image(path, img)
        loaded = load_image(path)
        assert loaded.shape == (6, 5, 3)
        # one 8-bit quantization step of tolerance
        assert np.abs(loaded - img).max() <= 0.5 / 255.0 + 1e-12

    def test_png_exact_for_quantized_values(self, tmp_path):
        img = np.arange(60).reshape(4, 5, 3) / 255.0
        path = tmp_path / "x.png"
        save_image(path, img)
        np.testing.assert_allclose(load_image(path), img, atol=1e-12)

    def test_ppm_parse(self, tmp_path):
        path = tmp_path / "x.ppm"
        body = bytes(range(2 * 2 * 3))
        path.write_bytes(b"P6\n# comment\n2 2\n255\n" + body)
        img = load_image(path)
        assert img.shape == (2, 2, 3)
        np.testing.assert_allclose(img.reshape(-1),
                                   np.arange(12) / 255.0, atol=1e-12)

    def test_bad_ppm_rejected(self, tmp_path):
        path = tmp_path / "x.ppm"
        path.write_bytes(b"P3\n1 1\n255\n0 0 0")
        with pytest.raises(NvsurfError):
            load_image(path)


class TestSyntheticScene:
    def test_generator_deterministic(self, tmp_path):
        recipe = SceneRecipe(mesh_resolution=6, resolution=8, view_count=2,
                             supersampling=2)
        m1 = generate_synthetic_scene(recipe, 7, tmp_path / "a")
        m2 = generate_synthetic_scene(recipe, 7, tmp_path / "b")
        for f1, f2 in zip(m1.frames, m2.frames):
            a = load_image(m1.image_path(f1))
            b = load_image(m2.image_path(f2))
            np.testing.assert_array_equal(a, b)
            np.testing.assert_array_equal(f1.camera.camera_to_world,
                                          f2.camera.camera_to_world)

    def test_different_seed_different_cameras(self, tmp_path):
        recipe = SceneRecipe(mesh_resolution=6, resolution=8, view_count=2,
                             supersampling=1)
        m1 = generate_synthetic_scene(recipe, 1, tmp_path / "a")
        m2 = generate_synthetic_scene(recipe, 2, tmp_path / "b")
        assert not np.allclose(m1.frames[0].camera.camera_to_world,
                               m2.frames[0].camera.camera_to_world)

    def test_unknown_shape_rejected(self):
        with pytest.raises(ConfigurationError):
            make_shape(SceneRecipe(shape="torus"))

    def test_cameras_focal_tracks_distance(self):
        recipe = SceneRecipe(resolution=64, view_count=6,
                             distances=(2.0, 4.0))
        cams = synthetic_cameras(recipe, 1.0, np.random.default_rng(0))
        # focal doubles with distance, so apparent size stays constant
        assert cams[1].fx == pytest.approx(2 * cams[0].fx)
        assert cams[2].fx == pytest.approx(cams[0].fx)

    def test_reference_render_fill_fraction(self):
        recipe = SceneRecipe(mesh_resolution=16, resolution=32, view_count=1,
                             supersampling=1, fill_fraction=0.8)
        mesh = make_shape(recipe)
        cams = synthetic_cameras(recipe, 1.0, np.random.default_rng(0))
        img = reference_render(mesh, cams[0], recipe)
        fg = (img != 1.0).any(axis=2).mean()
        # the sphere should occupy a substantial but not full image fraction
        assert 0.35 < fg < 0.8

    def test_sphere_watertight_directions(self):
        # rays from every direction toward the center must hit
        from nvsurf.geometry import build_bvh, intersect_rays
        mesh = make_shape(SceneRecipe(mesh_resolution=10))
        bvh = build_bvh(mesh)
        rng = np.random.default_rng(0)
        d = rng.normal(size=(200, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        origins = -3.0 * d
        fid, _, _, t = intersect_rays(bvh, origins, d)
        assert (fid >= 0).all()
        np.testing.assert_allclose(t, 2.0, atol=0.06)   # radius-1 sphere


class TestAnalyticShading:
    def test_albedo_in_unit_range(self):
        rng = np.random.default_rng(0)
        p = rng.uniform(-1, 1, size=(100, 3))
        for texture in ("sinusoid", "checker"):
            a = analytic_albedo(p, SceneRecipe(texture=texture))
            assert a.min() >= 0.0 and a.max() <= 1.0

    def test_checker_alternates(self):
        recipe = SceneRecipe(texture="checker", texture_frequency=1.0)
        a = analytic_albedo(np.array([[0.5, 0.5, 0.5]]), recipe)
        b = analytic_albedo(np.array([[1.5, 0.5, 0.5]]), recipe)
        assert not np.allclose(a, b)
        c = analytic_albedo(np.array([[2.5, 0.5, 0.5]]), recipe)
        np.testing.assert_array_equal(a, c)

    def test_shading_flat_facing_patch(self):
        # normal facing the light head-on: diffuse term maximal
        recipe = SceneRecipe(texture_frequency=0.0)    # constant albedo 0.6
        from nvsurf.dataset import _LIGHT_DIR
        n = -_LIGHT_DIR[None, :]
        view = _LIGHT_DIR[None, :]
        col = analytic_shade(np.zeros((1, 3)), n, view, recipe)
        expected = 0.6 * (0.35 + 0.6) + 0.15   # full spec along the normal
        np.testing.assert_allclose(col[0], expected, rtol=1e-6)

    def test_shading_grazing_patch_darker(self):
        recipe = SceneRecipe(texture_frequency=0.0)
        from nvsurf.dataset import _LIGHT_DIR
        facing = analytic_shade(np.zeros((1, 3)), -_LIGHT_DIR[None, :],
                                _LIGHT_DIR[None, :], recipe)
        ortho = np.array([_LIGHT_DIR[1], -_LIGHT_DIR[0], 0.0])
        ortho /= np.linalg.norm(ortho)
        grazing = analytic_shade(np.zeros((1, 3)), ortho[None, :],
                                 _LIGHT_DIR[None, :], recipe)
        assert grazing.mean() < facing.mean()
