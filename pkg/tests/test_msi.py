"""Sphere sweeping, layer interpolation, projected colors, initialization."""

import math

import numpy as np
import pytest

from msifield.field import sigmoid
from msifield.geometry import (
    FisheyeCamera,
    SphereSchedule,
    equirect_dir,
    project_fisheye_batch,
    unit_ray_from_spherical,
)
from msifield.msi import (
    MsiGrid,
    bilinear_sample_image,
    init_learnable,
    project_colors,
    sample_layer_bilinear,
    sphere_sweep,
)
from msifield.scene import (
    AxisGradient,
    Primitive,
    SceneDesc,
    Solid,
    Sphere,
    default_rig,
    generate_bundle,
)

GREEN = (0.1, 0.8, 0.2)


@pytest.fixture(scope="module")
def enclosure_bundle():
    scene = SceneDesc(primitives=(Primitive(shape=Sphere(center=(0, 0, 0), radius=3.0),
                                            texture=Solid(rgb=GREEN)),))
    rig = default_rig(image_size=96)
    return generate_bundle(scene, rig, pano_width=64, pano_height=32)


def narrow_rig():
    """Four 90-degree cameras: plenty of directions fall outside every FoV."""
    cams = []
    for cam in default_rig(image_size=96):
        cams.append(FisheyeCamera(width=96, height=96, focal=47.0 / (math.pi / 4),
                                  principal_point=cam.principal_point,
                                  fov_max=math.radians(90.0),
                                  pose_rig_from_cam=cam.pose_rig_from_cam))
    return cams


class TestSphereSweep:
    def test_solid_enclosure_uniform_color(self, enclosure_bundle):
        sched = SphereSchedule(n_layers=6, d_inv_max=2.0)
        grid = sphere_sweep(enclosure_bundle.images, enclosure_bundle.cameras, sched, 16, 32)
        valid = grid.swept_valid
        assert valid.mean() > 0.5
        colors = grid.swept_rgb[valid]
        np.testing.assert_allclose(colors, np.broadcast_to(GREEN, colors.shape), atol=2 / 255)

    def test_directions_outside_all_fovs_invalid(self, enclosure_bundle):
        cams = narrow_rig()
        sched = SphereSchedule(n_layers=4, d_inv_max=2.0)
        grid = sphere_sweep(enclosure_bundle.images, cams, sched, 16, 32)
        # straight up lies outside all four 90-degree forward cones
        top_cells = grid.swept_valid[:, :, 0, :]
        assert not np.any(top_cells)

    def test_random_cell_matches_pointwise_oracle(self, bundle, rng):
        sched = SphereSchedule(n_layers=5, d_inv_max=2.0)
        h, w = 16, 32
        grid = sphere_sweep(bundle.images, bundle.cameras, sched, h, w)
        radii = sched.radii()
        for _ in range(50):
            n = int(rng.integers(0, 5))
            v = int(rng.integers(0, h))
            u = int(rng.integers(0, w))
            k = int(rng.integers(0, 4))
            theta, phi = equirect_dir(w, h, u, v)
            point = unit_ray_from_spherical(theta, phi) * radii[n]
            uv, ok = project_fisheye_batch(bundle.cameras[k], point[None, :])
            assert bool(ok[0]) == bool(grid.swept_valid[k, n, v, u])
            if ok[0]:
                want = bilinear_sample_image(bundle.images[k], uv)
                np.testing.assert_allclose(grid.swept_rgb[k, n, v, u], want[0], atol=1e-6)

    def test_camera_permutation_equivariance(self, bundle):
        sched = SphereSchedule(n_layers=3, d_inv_max=2.0)
        g1 = sphere_sweep(bundle.images, bundle.cameras, sched, 8, 16)
        perm = [2, 0, 3, 1]
        g2 = sphere_sweep([bundle.images[i] for i in perm],
                          [bundle.cameras[i] for i in perm], sched, 8, 16)
        np.testing.assert_array_equal(g1.swept_rgb[perm], g2.swept_rgb)
        np.testing.assert_array_equal(g1.swept_valid[perm], g2.swept_valid)

    def test_photo_consistency_on_layer_surface(self):
        # smooth-textured enclosing sphere placed exactly on a layer radius:
        # wherever two cameras see a cell, their swept colors must agree
        sched = SphereSchedule(n_layers=4, d_inv_max=2.0)
        radius = sched.radii()[1]
        scene = SceneDesc(primitives=(Primitive(
            shape=Sphere(center=(0, 0, 0), radius=radius),
            texture=AxisGradient(rgb_lo=(0.1, 0.2, 0.1), rgb_hi=(0.9, 0.7, 0.8))),))
        rig = default_rig(image_size=128)
        b = generate_bundle(scene, rig, pano_width=32, pano_height=16)
        grid = sphere_sweep(b.images, b.cameras, sched, 16, 32)
        rgb, valid = grid.swept_rgb[:, 1], grid.swept_valid[:, 1]
        count = valid.sum(axis=0)
        mean = np.sum(rgb * valid[..., None], axis=0) / np.maximum(count[..., None], 1)
        dev = np.abs(rgb - mean) * valid[..., None]
        assert dev[:, count >= 2].max() < 2 / 255


@pytest.fixture(scope="module")
def toy_grid():
    rng = np.random.default_rng(5)
    sched = SphereSchedule(n_layers=3, d_inv_max=2.0)
    h, w = 8, 16
    return MsiGrid(schedule=sched, height=h, width=w,
                   occ_logit=rng.normal(size=(3, h, w)).astype(np.float32),
                   color_logit=rng.normal(size=(3, h, w, 3)).astype(np.float32))


class TestLayerInterpolation:
    def test_node_identity(self, toy_grid):
        h, w = toy_grid.height, toy_grid.width
        u, v = 5, 3
        theta, phi = equirect_dir(w, h, u, v)
        out = sample_layer_bilinear(toy_grid, 1, theta, phi)
        assert out["occ_logit"] == pytest.approx(toy_grid.occ_logit[1, v, u], abs=1e-6)
        np.testing.assert_allclose(out["color_logit"], toy_grid.color_logit[1, v, u], atol=1e-6)

    def test_theta_midpoint_is_mean(self, toy_grid):
        h, w = toy_grid.height, toy_grid.width
        v = 4
        t0, phi = equirect_dir(w, h, 6, v)
        t1, _ = equirect_dir(w, h, 7, v)
        out = sample_layer_bilinear(toy_grid, 0, 0.5 * (t0 + t1), phi)
        want = 0.5 * (toy_grid.occ_logit[0, v, 6] + toy_grid.occ_logit[0, v, 7])
        assert out["occ_logit"] == pytest.approx(want, abs=1e-6)

    def test_seam_matches_padded_grid_oracle(self, toy_grid, rng):
        h, w = toy_grid.height, toy_grid.width
        padded = np.concatenate([toy_grid.occ_logit[1], toy_grid.occ_logit[1][:, :1]], axis=1)
        for _ in range(40):
            delta = rng.uniform(0, 2 * math.pi / w)
            theta = 2 * math.pi - delta  # just left of the wrap seam
            phi = rng.uniform(-math.pi / 2, math.pi / 2)
            got = sample_layer_bilinear(toy_grid, 1, theta, phi)["occ_logit"]
            # oracle: interpolate on the padded plane without wrapping
            uf = theta * w / (2 * math.pi) - 0.5
            vf = np.clip((0.5 - phi / math.pi) * h - 0.5, 0, h - 1)
            u0 = int(np.floor(uf))
            v0 = min(int(np.floor(vf)), h - 2)
            du, dv = uf - u0, vf - v0
            p = padded.astype(np.float64)
            want = ((p[v0, u0] * (1 - du) + p[v0, u0 + 1] * du) * (1 - dv)
                    + (p[v0 + 1, u0] * (1 - du) + p[v0 + 1, u0 + 1] * du) * dv)
            assert got == pytest.approx(want, abs=1e-9)

    def test_continuity_across_seam(self, toy_grid):
        eps = 1e-9
        a = sample_layer_bilinear(toy_grid, 2, 2 * math.pi - eps, 0.3)["occ_logit"]
        b = sample_layer_bilinear(toy_grid, 2, eps, 0.3)["occ_logit"]
        assert a == pytest.approx(b, abs=1e-6)

    def test_bounded_by_corner_extremes(self, toy_grid, rng):
        h, w = toy_grid.height, toy_grid.width
        lo, hi = toy_grid.occ_logit[0].min(), toy_grid.occ_logit[0].max()
        theta = rng.uniform(0, 2 * math.pi, 300)
        phi = rng.uniform(-math.pi / 2, math.pi / 2, 300)
        vals = sample_layer_bilinear(toy_grid, 0, theta, phi)["occ_logit"]
        assert np.all(vals >= lo - 1e-9) and np.all(vals <= hi + 1e-9)

    def test_layer_out_of_range(self, toy_grid):
        with pytest.raises(IndexError):
            sample_layer_bilinear(toy_grid, 3, 0.0, 0.0)


class TestProjectColors:
    def test_point_visible_to_single_camera(self, enclosure_bundle):
        cams = narrow_rig()
        point = np.array([1.5, 0.0, 0.0])  # straight ahead of camera 0 only
        rgb, valid = project_colors(enclosure_bundle.images, cams, point)
        np.testing.assert_array_equal(valid[0], [True, False, False, False])
        np.testing.assert_allclose(rgb[0, 0], GREEN, atol=2 / 255)
        np.testing.assert_array_equal(rgb[0, 1:], 0.0)

    def test_wall_point_seen_by_two_cameras_agrees(self, enclosure_bundle):
        point = np.array([2.0, 0.0, 2.0]) / math.sqrt(2) * 1.5
        rgb, valid = project_colors(enclosure_bundle.images, enclosure_bundle.cameras, point)
        seen = np.nonzero(valid[0])[0]
        assert len(seen) >= 2
        for k in seen:
            np.testing.assert_allclose(rgb[0, k], GREEN, atol=2 / 255)

    def test_point_behind_all_narrow_cameras(self, enclosure_bundle):
        cams = narrow_rig()
        rgb, valid = project_colors(enclosure_bundle.images, cams, np.array([0.0, 2.0, 0.0]))
        assert not np.any(valid)
        np.testing.assert_array_equal(rgb, 0.0)


class TestInitLearnable:
    def test_agreeing_cameras_give_that_color(self, enclosure_bundle):
        sched = SphereSchedule(n_layers=4, d_inv_max=2.0)
        grid = sphere_sweep(enclosure_bundle.images, enclosure_bundle.cameras, sched, 16, 32)
        init_learnable(grid)
        valid_any = grid.swept_valid.any(axis=0)
        got = sigmoid(grid.color_logit[valid_any])
        np.testing.assert_allclose(got, np.broadcast_to(GREEN, got.shape), atol=1 / 255 + 1e-3)

    def test_no_valid_camera_gives_half(self, enclosure_bundle):
        cams = narrow_rig()
        sched = SphereSchedule(n_layers=4, d_inv_max=2.0)
        grid = sphere_sweep(enclosure_bundle.images, cams, sched, 16, 32)
        init_learnable(grid)
        none_valid = ~grid.swept_valid.any(axis=0)
        assert np.any(none_valid)
        np.testing.assert_allclose(sigmoid(grid.occ_logit[none_valid]), 0.11920292, atol=1e-7)
        got = sigmoid(grid.color_logit[none_valid])
        np.testing.assert_allclose(got, 0.5, atol=1e-12)

    def test_initial_occupancy_value(self, swept_grid):
        assert sigmoid(np.float64(swept_grid.occ_logit[0, 0, 0])) == pytest.approx(0.11920292, abs=1e-7)
