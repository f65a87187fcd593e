"""On-disk formats: PFM, PNG, artifact container, JSON schemas."""

import numpy as np
import pytest

from msifield import formats
from msifield.field import FieldParams, init_mlp_params
from msifield.geometry import Pose, SphereSchedule
from msifield.msi import MsiGrid
from msifield.render import EquirectTarget, render_view
from msifield.scene import default_rig, default_room_scene, generate_bundle


class TestPfm:
    def test_round_trip_exact(self, tmp_path, rng):
        data = rng.normal(size=(17, 23)).astype(np.float32)
        data[0, 0] = 0.0
        data[1, 2] = -1.5
        path = tmp_path / "x.pfm"
        formats.write_pfm(path, data)
        back = formats.read_pfm(path)
        np.testing.assert_array_equal(back, data)

    def test_header_fields(self, tmp_path):
        path = tmp_path / "x.pfm"
        formats.write_pfm(path, np.zeros((4, 6), dtype=np.float32))
        raw = path.read_bytes()
        assert raw.startswith(b"Pf\n6 4\n-1.0\n")
        assert len(raw) == len(b"Pf\n6 4\n-1.0\n") + 4 * 6 * 4

    def test_rejects_multichannel(self, tmp_path):
        with pytest.raises(ValueError):
            formats.write_pfm(tmp_path / "x.pfm", np.zeros((4, 4, 3)))


class TestPng:
    def test_round_trip_within_quantization(self, tmp_path, rng):
        img = rng.uniform(0, 1, (9, 13, 3))
        path = tmp_path / "x.png"
        formats.write_png(path, img)
        back = formats.read_png(path)
        assert np.abs(back - img).max() <= 0.5 / 255 + 1e-9

    def test_deterministic_bytes(self, rng):
        img = rng.uniform(0, 1, (9, 13, 3))
        assert formats.png_bytes(img) == formats.png_bytes(img.copy())

    def test_grayscale(self, tmp_path):
        img = np.linspace(0, 1, 64).reshape(8, 8)
        path = tmp_path / "g.png"
        formats.write_png(path, img)
        back = formats.read_png(path)
        assert back.shape == (8, 8)
        assert np.abs(back - img).max() <= 0.5 / 255 + 1e-9


def small_grid(rng, with_swept=True):
    sched = SphereSchedule(n_layers=4, d_inv_max=2.0)
    kw = {}
    if with_swept:
        kw = dict(swept_rgb=rng.uniform(0, 1, (4, 4, 6, 12, 3)).astype(np.float32),
                  swept_valid=rng.uniform(size=(4, 4, 6, 12)) > 0.4)
    return MsiGrid(schedule=sched, height=6, width=12,
                   occ_logit=rng.normal(size=(4, 6, 12)).astype(np.float32),
                   color_logit=rng.normal(size=(4, 6, 12, 3)).astype(np.float32), **kw)


class TestArtifact:
    def test_round_trip_bitwise(self, tmp_path, rng):
        grid = small_grid(rng)
        path = tmp_path / "a.msi"
        formats.write_artifact(path, grid)
        back, mlp = formats.read_artifact(path)
        assert mlp is None
        assert back.swept_rgb is None
        np.testing.assert_array_equal(back.occ_logit, grid.occ_logit)
        np.testing.assert_array_equal(back.color_logit, grid.color_logit)
        assert back.schedule == grid.schedule

    def test_round_trip_with_swept_and_mlp(self, tmp_path, rng):
        grid = small_grid(rng)
        mlp = init_mlp_params(rng, feat_dim=4, hidden1=8, hidden2=8)
        path = tmp_path / "a.msi"
        formats.write_artifact(path, grid, mlp=mlp, include_swept=True)
        back, mlp2 = formats.read_artifact(path)
        np.testing.assert_array_equal(back.swept_rgb, grid.swept_rgb)
        np.testing.assert_array_equal(back.swept_valid, grid.swept_valid)
        assert mlp2 is not None and mlp2.feat_dim == 4
        for (w1, b1), (w2, b2) in zip(mlp.stage1 + mlp.stage2, mlp2.stage1 + mlp2.stage2):
            np.testing.assert_array_equal(w1.astype(np.float32), w2.astype(np.float32))
            np.testing.assert_array_equal(b1.astype(np.float32), b2.astype(np.float32))

    def test_reloaded_artifact_renders_bit_identically(self, tmp_path, rng):
        grid = small_grid(rng)
        params = FieldParams("explicit", grid)
        img1 = render_view(params, None, None, EquirectTarget(12, 6), Pose.identity())
        path = tmp_path / "a.msi"
        formats.write_artifact(path, grid)
        back, _ = formats.read_artifact(path)
        img2 = render_view(FieldParams("explicit", back), None, None,
                           EquirectTarget(12, 6), Pose.identity())
        for a, b in zip(img1, img2):
            np.testing.assert_array_equal(a, b)

    def test_corrupt_magic_rejected(self, tmp_path, rng):
        path = tmp_path / "bad.msi"
        grid = small_grid(rng)
        formats.write_artifact(path, grid)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"NOPE"
        path.write_bytes(bytes(raw))
        with pytest.raises(formats.ArtifactError):
            formats.read_artifact(path)

    def test_truncated_rejected(self, tmp_path, rng):
        path = tmp_path / "trunc.msi"
        formats.write_artifact(path, small_grid(rng))
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) // 2])
        with pytest.raises(formats.ArtifactError):
            formats.read_artifact(path)


class TestSceneRigJson:
    def test_scene_round_trip(self, tmp_path):
        scene = default_room_scene(seed=4)
        path = tmp_path / "scene.json"
        formats.save_scene(path, scene)
        back = formats.load_scene(path)
        assert back == scene

    def test_rig_round_trip(self, tmp_path):
        rig = default_rig(image_size=96)
        path = tmp_path / "rig.json"
        formats.save_rig(path, rig)
        back = formats.load_rig(path)
        for a, b in zip(rig, back):
            assert (a.width, a.height) == (b.width, b.height)
            assert a.focal == pytest.approx(b.focal)
            assert a.fov_max == pytest.approx(b.fov_max)
            np.testing.assert_allclose(a.pose_rig_from_cam.position,
                                       b.pose_rig_from_cam.position, atol=1e-15)
            np.testing.assert_allclose(a.pose_rig_from_cam.quat,
                                       b.pose_rig_from_cam.quat, atol=1e-15)


class TestBundleOnDisk:
    def test_manifest_round_trip(self, tmp_path):
        scene = default_room_scene(seed=6)
        rig = default_rig(image_size=64)
        bundle = generate_bundle(scene, rig, pano_width=32, pano_height=16)
        manifest = formats.save_bundle(tmp_path / "b", bundle, scene=scene, seed=6)
        back, scene2 = formats.load_bundle(manifest)
        assert scene2 == scene
        np.testing.assert_array_equal(back.gt_inv_depth, bundle.gt_inv_depth)
        assert len(back.images) == 4
        # PNG quantization bounds the color error
        for a, b in zip(back.images, bundle.images):
            assert np.abs(a - b).max() <= 0.5 / 255 + 1e-9

    def test_written_files(self, tmp_path):
        scene = default_room_scene(seed=6)
        rig = default_rig(image_size=64)
        bundle = generate_bundle(scene, rig, pano_width=32, pano_height=16)
        formats.save_bundle(tmp_path / "b", bundle, scene=scene)
        names = sorted(p.name for p in (tmp_path / "b").iterdir())
        assert names == ["bundle.json", "cam0.png", "cam1.png", "cam2.png",
                         "cam3.png", "gt_inv_depth.pfm", "gt_panorama.png"]
