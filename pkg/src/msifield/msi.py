"""Multi-sphere image: spherical sweeping and per-point feature access.

Each layer is an equirectangular grid.  Sweeping fills per-camera color and
validity channels by projecting every layer cell into every fisheye input;
the learnable occupancy-logit / color-logit channels are what per-scene
fitting optimizes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (
    SphereSchedule,
    equirect_dir,
    equirect_uv,
    project_fisheye_batch,
    unit_ray_from_spherical,
)


def bilinear_sample_image(img: np.ndarray, uv: np.ndarray,
                          mask: np.ndarray | None = None) -> np.ndarray:
    """Bilinear sample with edge clamping; uv has integer values at pixel centers.

    With a validity mask, corner weights are renormalized over valid texels
    so padding (e.g. outside a fisheye image circle) never bleeds in.
    """
    h, w = img.shape[:2]
    u = np.clip(uv[:, 0], 0.0, w - 1.0)
    v = np.clip(uv[:, 1], 0.0, h - 1.0)
    u0 = np.minimum(np.floor(u).astype(np.int64), w - 2) if w > 1 else np.zeros_like(u, dtype=np.int64)
    v0 = np.minimum(np.floor(v).astype(np.int64), h - 2) if h > 1 else np.zeros_like(v, dtype=np.int64)
    du = u - u0
    dv = v - v0
    weights = [(1 - du) * (1 - dv), du * (1 - dv), (1 - du) * dv, du * dv]
    corners = [(v0, u0), (v0, u0 + 1), (v0 + 1, u0), (v0 + 1, u0 + 1)]
    if mask is not None:
        weights = [wt * mask[cv, cu] for wt, (cv, cu) in zip(weights, corners)]
        total = weights[0] + weights[1] + weights[2] + weights[3]
        scale = np.where(total > 0, 1.0 / np.where(total > 0, total, 1.0), 0.0)
        weights = [wt * scale for wt in weights]
    if img.ndim == 3:
        weights = [wt[:, None] for wt in weights]
    out = weights[0] * img[v0, u0]
    for wt, (cv, cu) in zip(weights[1:], corners[1:]):
        out = out + wt * img[cv, cu]
    return out


def wrap_bilinear_coords(height: int, width: int, theta, phi):
    """Corner indices and fractions for equirectangular bilinear sampling.

    Wraps azimuthally at the theta = 0/2pi seam and clamps elevation at the
    poles.  Returns (v0, v1, u0, u1, dv, du).
    """
    u, v = equirect_uv(width, height, theta, phi)
    u = np.mod(u, width)
    u0 = np.floor(u).astype(np.int64)
    du = u - u0
    u0 = np.mod(u0, width)
    u1 = np.mod(u0 + 1, width)
    v = np.clip(v, 0.0, height - 1.0)
    v0 = np.minimum(np.floor(v).astype(np.int64), height - 2)
    v1 = v0 + 1
    dv = v - v0
    return v0, v1, u0, u1, dv, du


@dataclass
class MsiGrid:
    """Sphere-layer stack of learnable channels plus optional swept inputs.

    The swept channels exist after sphere_sweep and are needed for
    initialization and the MLP feature path; explicit-backend rendering
    needs only the learnable channels, so artifacts may omit the sweep.
    """

    schedule: SphereSchedule
    height: int
    width: int
    occ_logit: np.ndarray      # (L, H, W) float32
    color_logit: np.ndarray    # (L, H, W, 3) float32
    swept_rgb: np.ndarray | None = None    # (n_cams, L, H, W, 3) float32
    swept_valid: np.ndarray | None = None  # (n_cams, L, H, W) bool

    def __post_init__(self):
        L = self.schedule.n_layers
        expect = {
            "occ_logit": (self.occ_logit.shape, (L, self.height, self.width)),
            "color_logit": (self.color_logit.shape, (L, self.height, self.width, 3)),
        }
        if self.swept_rgb is not None:
            expect["swept_rgb"] = (self.swept_rgb.shape[1:], (L, self.height, self.width, 3))
            expect["swept_valid"] = (self.swept_valid.shape[1:], (L, self.height, self.width))
        for name, (got, want) in expect.items():
            if tuple(got) != want:
                raise ValueError(f"{name} has shape {got}, expected {want}")

    @property
    def has_swept(self) -> bool:
        return self.swept_rgb is not None

    @property
    def n_cameras(self) -> int:
        if self.swept_rgb is None:
            raise ValueError("grid has no swept channels")
        return self.swept_rgb.shape[0]

    @property
    def n_layers(self) -> int:
        return self.schedule.n_layers

    def swept_mean_rgb(self) -> np.ndarray:
        """(L, H, W, 3) validity-masked mean of the swept colors; 0.5 where no camera sees."""
        if self.swept_rgb is None:
            raise ValueError("grid has no swept channels")
        valid = self.swept_valid[..., None].astype(np.float64)
        count = np.sum(valid, axis=0)
        total = np.sum(self.swept_rgb.astype(np.float64) * valid, axis=0)
        return np.where(count > 0, total / np.maximum(count, 1.0), 0.5)

    def swept_variance(self) -> np.ndarray:
        """(L, H, W) photo-consistency signal: mean across channels of the
        validity-masked color variance across cameras."""
        if self.swept_rgb is None:
            raise ValueError("grid has no swept channels")
        valid = self.swept_valid[..., None].astype(np.float64)
        count = np.sum(valid, axis=0)
        mean = self.swept_mean_rgb()
        dev = (self.swept_rgb.astype(np.float64) - mean) * valid
        var = np.sum(dev * dev, axis=0) / np.maximum(count, 1.0)
        return np.mean(np.where(count > 0, var, 0.0), axis=-1)


def sphere_sweep(images, cameras, schedule: SphereSchedule, height: int, width: int) -> MsiGrid:
    """Fill the swept channels by projecting each layer cell into each camera."""
    n_cams = len(cameras)
    L = schedule.n_layers
    radii = schedule.radii()
    swept_rgb = np.zeros((n_cams, L, height, width, 3), dtype=np.float32)
    swept_valid = np.zeros((n_cams, L, height, width), dtype=bool)

    u, v = np.meshgrid(np.arange(width), np.arange(height))
    theta, phi = equirect_dir(width, height, u, v)
    dirs = unit_ray_from_spherical(theta, phi).reshape(-1, 3)

    masks = [cam.circle_mask() for cam in cameras]
    for n in range(L):
        points = dirs * radii[n]
        for k, (img, cam) in enumerate(zip(images, cameras)):
            uv, valid = project_fisheye_batch(cam, points)
            rgb = np.zeros((points.shape[0], 3))
            if np.any(valid):
                rgb[valid] = bilinear_sample_image(np.asarray(img, dtype=np.float64),
                                                   uv[valid], mask=masks[k])
            swept_rgb[k, n] = rgb.reshape(height, width, 3).astype(np.float32)
            swept_valid[k, n] = valid.reshape(height, width)

    return MsiGrid(schedule=schedule, height=height, width=width,
                   occ_logit=np.zeros((L, height, width), dtype=np.float32),
                   color_logit=np.zeros((L, height, width, 3), dtype=np.float32),
                   swept_rgb=swept_rgb, swept_valid=swept_valid)


def sample_layer_bilinear(grid: MsiGrid, layer: int, theta, phi, channels=("occ_logit", "color_logit")):
    """Bilinear interpolation on one layer, seam-wrapped in theta.

    ``channels`` selects from occ_logit, color_logit, swept_rgb, swept_valid,
    swept_mean_rgb, swept_variance.  Returns a dict of arrays whose leading
    shape matches theta/phi.
    """
    if not 0 <= layer < grid.n_layers:
        raise IndexError("layer out of range")
    theta = np.asarray(theta, dtype=np.float64)
    shape = theta.shape
    v0, v1, u0, u1, dv, du = wrap_bilinear_coords(grid.height, grid.width,
                                                  theta.ravel(), np.asarray(phi, dtype=np.float64).ravel())

    def interp(plane):
        p = plane.astype(np.float64)
        extra = (None,) * (p.ndim - 2)
        dvx = dv[(...,) + extra] if p.ndim > 2 else dv
        dux = du[(...,) + extra] if p.ndim > 2 else du
        top = p[v0, u0] + (p[v0, u1] - p[v0, u0]) * dux
        bot = p[v1, u0] + (p[v1, u1] - p[v1, u0]) * dux
        return top + (bot - top) * dvx

    sources = {
        "occ_logit": lambda: grid.occ_logit[layer],
        "color_logit": lambda: grid.color_logit[layer],
        "swept_mean_rgb": lambda: grid.swept_mean_rgb()[layer],
        "swept_variance": lambda: grid.swept_variance()[layer],
    }
    out = {}
    for ch in channels:
        if ch == "swept_rgb":
            vals = np.stack([interp(grid.swept_rgb[k, layer]) for k in range(grid.n_cameras)])
            out[ch] = vals.reshape((grid.n_cameras,) + shape + (3,))
        elif ch == "swept_valid":
            vals = np.stack([interp(grid.swept_valid[k, layer]) for k in range(grid.n_cameras)])
            out[ch] = vals.reshape((grid.n_cameras,) + shape)
        else:
            vals = interp(sources[ch]())
            out[ch] = vals.reshape(shape + vals.shape[1:])
    return out


def project_colors(images, cameras, points_rig: np.ndarray):
    """Per-camera bilinear colors at 3D points.

    Returns (rgb (N, n_cams, 3), valid (N, n_cams)); invalid entries are zero.
    """
    points_rig = np.atleast_2d(np.asarray(points_rig, dtype=np.float64))
    n = points_rig.shape[0]
    k = len(cameras)
    rgb = np.zeros((n, k, 3))
    valid = np.zeros((n, k), dtype=bool)
    for i, (img, cam) in enumerate(zip(images, cameras)):
        uv, ok = project_fisheye_batch(cam, points_rig)
        if np.any(ok):
            rgb[ok, i] = bilinear_sample_image(np.asarray(img, dtype=np.float64),
                                               uv[ok], mask=cam.circle_mask())
        valid[:, i] = ok
    return rgb, valid


def init_occupancy_from_consistency(grid: MsiGrid, gain: float = 6.0,
                                    var_scale: float = 0.01, base: float = -4.0,
                                    min_views: int = 2) -> MsiGrid:
    """Warm-start occupancy logits from multi-view photo-consistency.

    Low swept-color variance across at least ``min_views`` cameras marks a
    likely surface cell (the matching cue a learned geometry decoder would
    extract from the cost volume); occupancy starts high there and low
    elsewhere.  Without this cue, per-scene fitting of the explicit grid
    tends to settle in semi-transparent configurations that reproduce the
    four source views but ghost from novel viewpoints.
    """
    var = grid.swept_variance()
    count = grid.swept_valid.sum(axis=0)
    score = np.exp(-var / var_scale) * (count >= min_views)
    grid.occ_logit = (base + gain * score).astype(np.float32)
    return grid


def init_learnable(grid: MsiGrid) -> MsiGrid:
    """Initialize learnable channels from the sweep.

    Color logits start at the logit of the validity-masked mean swept color
    (0.5 where nothing projects); occupancy logits start at -2 everywhere,
    an initial occupancy just under 0.12.
    """
    mean = grid.swept_mean_rgb()
    mean = np.clip(mean, 1.0 / 510.0, 1.0 - 1.0 / 510.0)
    grid.color_logit = np.log(mean / (1.0 - mean)).astype(np.float32)
    grid.occ_logit = np.full((grid.n_layers, grid.height, grid.width), -2.0, dtype=np.float32)
    return grid
