"""Ray sampling at sphere-layer intersections and occupancy compositing.

Sample points are the deterministic ray/layer intersections (no jitter);
compositing weights are w_i = o_i * prod_{j<i}(1 - o_j) front to back.
Depth is composited in inverse-depth space using the distance along the
ray, so the distant background contributes nearly zero instead of a huge
metric depth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
import numpy as np

from . import kernels
from .field import (
    FieldParams,
    build_feature_context,
    eval_explicit_batch,
    mlp_eval_batch,
)
from .geometry import (
    FisheyeCamera,
    OutOfVolumeError,
    Pose,
    Ray,
    SphereSchedule,
    equirect_dir,
    spherical_from_unit_ray,
    unit_ray_from_spherical,
    unproject_fisheye_batch,
)
from .msi import project_colors


@dataclass
class RaySamples:
    """Ordered intersections of one ray with the sphere layers."""

    layers: np.ndarray    # (K,) layer indices into the schedule
    z: np.ndarray         # (K,) distance along the ray, strictly increasing
    points: np.ndarray    # (K, 3)
    theta: np.ndarray     # (K,)
    phi: np.ndarray       # (K,)


@dataclass
class RenderResult:
    rgb: np.ndarray       # (3,)
    inv_depth: float
    acc: float


def sample_ray_spheres(ray: Ray, schedule: SphereSchedule) -> RaySamples:
    """Intersections with every layer whose sphere contains the ray origin."""
    o, d = ray.origin, ray.dir
    oo = float(np.dot(o, o))
    radii = schedule.radii()
    if oo >= radii[0] ** 2:
        raise OutOfVolumeError("ray origin lies outside the background sphere")
    inside = radii ** 2 > oo
    layers = np.nonzero(inside)[0]
    hb = float(np.dot(o, d))
    disc = np.maximum(hb * hb - oo + radii[layers] ** 2, 0.0)
    z = -hb + np.sqrt(disc)
    order = np.argsort(z, kind="stable")
    layers, z = layers[order], z[order]
    points = o[None, :] + z[:, None] * d[None, :]
    theta, phi = spherical_from_unit_ray(points / np.linalg.norm(points, axis=1, keepdims=True))
    return RaySamples(layers=layers, z=z, points=points, theta=theta, phi=phi)


def composite(occ: np.ndarray, rgb: np.ndarray, d_inv: np.ndarray) -> RenderResult:
    """Front-to-back occupancy compositing of ordered samples."""
    occ = np.asarray(occ, dtype=np.float64)
    rgb = np.asarray(rgb, dtype=np.float64).reshape(-1, 3)
    d_inv = np.asarray(d_inv, dtype=np.float64)
    t_incl = np.cumprod(1.0 - occ)
    t_excl = np.concatenate([[1.0], t_incl[:-1]])
    w = occ * t_excl
    return RenderResult(rgb=w @ rgb, inv_depth=float(w @ d_inv), acc=float(np.sum(w)))


def render_ray(params: FieldParams, images, cameras, ray: Ray,
               t_stop: float = 0.0) -> RenderResult:
    """One ray through sample -> field -> composite (per-ray reference path)."""
    grid = params.grid
    s = sample_ray_spheres(ray, grid.schedule)
    if params.backend == "explicit":
        occ, rgb = eval_explicit_batch(grid, s.layers, s.theta, s.phi)
    else:
        f_geo, f_appr = build_feature_context(grid, s.layers, s.theta, s.phi)
        c_proj, c_valid = project_colors(images, cameras, s.points)
        dirs = np.broadcast_to(ray.dir, s.points.shape)
        occ, rgb = mlp_eval_batch(params.mlp, s.points, dirs, f_geo, f_appr,
                                  c_proj, c_valid.astype(np.float64))
    if t_stop > 0.0:
        t_excl = np.concatenate([[1.0], np.cumprod(1.0 - occ)[:-1]])
        occ = occ * (t_excl >= t_stop)
    return composite(occ, rgb, 1.0 / s.z)


# ---------------------------------------------------------------------------
# View targets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EquirectTarget:
    width: int
    height: int


@dataclass(frozen=True)
class FisheyeTarget:
    camera: FisheyeCamera


@dataclass(frozen=True)
class PinholeTarget:
    """Perspective camera; fov_deg is the horizontal field of view."""

    width: int
    height: int
    fov_deg: float


def target_rays(target, pose: Pose):
    """(origins (N, 3), dirs (N, 3), shape (H, W), mask (N,) bool)."""
    if isinstance(target, EquirectTarget):
        w, h = target.width, target.height
        u, v = np.meshgrid(np.arange(w), np.arange(h))
        theta, phi = equirect_dir(w, h, u.ravel(), v.ravel())
        dirs = unit_ray_from_spherical(theta, phi)
        origins = np.broadcast_to(pose.position, dirs.shape)
        return origins, dirs @ pose.rotation.T, (h, w), np.ones(h * w, dtype=bool)
    if isinstance(target, FisheyeTarget):
        cam = target.camera
        mask = cam.circle_mask()
        vidx, uidx = np.nonzero(mask)
        uv = np.stack([uidx, vidx], axis=-1).astype(np.float64)
        origins, dirs = unproject_fisheye_batch(cam, uv)
        dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
        return (origins @ pose.rotation.T + pose.position, dirs @ pose.rotation.T,
                (cam.height, cam.width), mask.ravel())
    if isinstance(target, PinholeTarget):
        w, h = target.width, target.height
        f = (w / 2.0) / math.tan(math.radians(target.fov_deg) / 2.0)
        cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
        u, v = np.meshgrid(np.arange(w), np.arange(h))
        dirs = np.stack([(u.ravel() - cx) / f, (v.ravel() - cy) / f,
                         np.ones(h * w)], axis=-1)
        dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
        origins = np.broadcast_to(pose.position, dirs.shape)
        return origins, dirs @ pose.rotation.T, (h, w), np.ones(h * w, dtype=bool)
    raise TypeError(f"unknown render target {target!r}")


def _render_rays_mlp(params: FieldParams, images, cameras, origins, dirs,
                     t_stop: float, chunk: int = 4096):
    """Batched sample/field/composite for the MLP backend."""
    grid = params.grid
    schedule = grid.schedule
    radii = schedule.radii()
    L = schedule.n_layers
    n = origins.shape[0]
    out_rgb = np.zeros((n, 3))
    out_inv = np.zeros(n)
    out_acc = np.zeros(n)
    ns = np.arange(L - 1, -1, -1)
    r_ord = radii[ns]

    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        o = origins[lo:hi]
        d = dirs[lo:hi]
        m = hi - lo
        oo = np.sum(o * o, axis=1)
        hb = np.sum(o * d, axis=1)
        inside = oo[:, None] < r_ord[None, :] ** 2
        disc = np.maximum(hb[:, None] ** 2 - oo[:, None] + r_ord[None, :] ** 2, 0.0)
        z = -hb[:, None] + np.sqrt(disc)
        pts = o[:, None, :] + z[..., None] * d[:, None, :]
        dirn = np.linalg.norm(pts, axis=-1, keepdims=True)
        unit = pts / np.maximum(dirn, 1e-12)
        theta, phi = spherical_from_unit_ray(unit.reshape(-1, 3))
        layers = np.broadcast_to(ns[None, :], (m, L)).ravel()

        f_geo, f_appr = build_feature_context(grid, layers, theta, phi)
        c_proj, c_valid = project_colors(images, cameras, pts.reshape(-1, 3))
        dflat = np.broadcast_to(d[:, None, :], (m, L, 3)).reshape(-1, 3)
        occ, rgb = mlp_eval_batch(params.mlp, pts.reshape(-1, 3), dflat,
                                  f_geo, f_appr, c_proj, c_valid.astype(np.float64))
        occ = occ.reshape(m, L) * inside
        rgb = rgb.reshape(m, L, 3)
        if t_stop > 0.0:
            t_raw = np.concatenate([np.ones((m, 1)), np.cumprod(1.0 - occ, axis=1)[:, :-1]], axis=1)
            occ = occ * (t_raw >= t_stop)
        t_incl = np.cumprod(1.0 - occ, axis=1)
        t_excl = np.concatenate([np.ones((m, 1)), t_incl[:, :-1]], axis=1)
        w = occ * t_excl
        z_safe = np.where(inside & (z > 0), z, 1.0)
        out_rgb[lo:hi] = np.sum(w[..., None] * rgb, axis=1)
        out_inv[lo:hi] = np.sum(w * np.where(inside, 1.0 / z_safe, 0.0), axis=1)
        out_acc[lo:hi] = np.sum(w, axis=1)
    return out_rgb, out_inv, out_acc


def render_view(params: FieldParams, images, cameras, target, pose: Pose,
                t_stop: float = 0.0):
    """Render (rgb, inv_depth, acc) images for a posed target camera."""
    grid = params.grid
    if float(np.linalg.norm(pose.position)) >= grid.schedule.background_radius:
        raise OutOfVolumeError("pose lies outside the background sphere")
    origins, dirs, (h, w), mask = target_rays(target, pose)
    if params.backend == "explicit":
        radii = grid.schedule.radii()
        inv_depths = grid.schedule.inv_depths()
        rgb, inv, acc = kernels.render_batch(
            np.ascontiguousarray(grid.occ_logit),
            np.ascontiguousarray(grid.color_logit),
            np.ascontiguousarray(radii), np.ascontiguousarray(inv_depths),
            np.ascontiguousarray(origins, dtype=np.float64),
            np.ascontiguousarray(dirs, dtype=np.float64),
            True, t_stop)
    else:
        rgb, inv, acc = _render_rays_mlp(params, images, cameras, origins, dirs, t_stop)

    img_rgb = np.zeros((h * w, 3))
    img_inv = np.zeros(h * w)
    img_acc = np.zeros(h * w)
    img_rgb[mask] = rgb
    img_inv[mask] = inv
    img_acc[mask] = acc
    return (img_rgb.reshape(h, w, 3), img_inv.reshape(h, w), img_acc.reshape(h, w))
