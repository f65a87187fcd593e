"""Analytic synthetic scenes and the ray-tracing oracle.

Ground truth for fitting and evaluation comes from closed-form
intersections with spheres, axis-aligned boxes, and finite discs, shaded
with unlit (view-independent) albedo textures.  Infinite depth is stored
as inverse depth 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .geometry import (
    FisheyeCamera,
    Pose,
    Ray,
    equirect_dir_grid,
    unproject_fisheye_batch,
)

_HIT_EPS = 1e-9


# ---------------------------------------------------------------------------
# Shapes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Sphere:
    center: tuple
    radius: float

    def intersect(self, origins, dirs):
        oc = origins - np.asarray(self.center, dtype=np.float64)
        b = 2.0 * np.sum(dirs * oc, axis=-1)
        c = np.sum(oc * oc, axis=-1) - self.radius ** 2
        disc = b * b - 4.0 * c
        hit = disc >= 0
        sq = np.sqrt(np.where(hit, disc, 0.0))
        t1 = 0.5 * (-b - sq)
        t2 = 0.5 * (-b + sq)
        t = np.where(t1 > _HIT_EPS, t1, t2)
        return np.where(hit & (t > _HIT_EPS), t, np.inf)

    def y_range(self):
        return self.center[1] - self.radius, self.center[1] + self.radius


@dataclass(frozen=True)
class Box:
    bmin: tuple
    bmax: tuple

    def intersect(self, origins, dirs):
        bmin = np.asarray(self.bmin, dtype=np.float64)
        bmax = np.asarray(self.bmax, dtype=np.float64)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / dirs
            t0 = (bmin - origins) * inv
            t1 = (bmax - origins) * inv
        # Axis-parallel rays: substitute +-inf slabs by whether the origin
        # component lies inside the slab.
        par = dirs == 0.0
        if np.any(par):
            inside = (origins >= bmin) & (origins <= bmax)
            t0 = np.where(par, np.where(inside, -np.inf, np.inf), t0)
            t1 = np.where(par, np.where(inside, np.inf, -np.inf), t1)
        tnear = np.max(np.minimum(t0, t1), axis=-1)
        tfar = np.min(np.maximum(t0, t1), axis=-1)
        hit = (tfar >= tnear) & (tfar > _HIT_EPS)
        t = np.where(tnear > _HIT_EPS, tnear, tfar)
        return np.where(hit, t, np.inf)

    def y_range(self):
        return self.bmin[1], self.bmax[1]


@dataclass(frozen=True)
class Disc:
    """Finite piece of a plane: points with normal . p = offset within
    ``extent`` meters of the plane point closest to the origin."""

    normal: tuple
    offset: float
    extent: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64)
        object.__setattr__(self, "normal", tuple(n / np.linalg.norm(n)))

    @property
    def anchor(self):
        return np.asarray(self.normal) * self.offset

    def intersect(self, origins, dirs):
        n = np.asarray(self.normal, dtype=np.float64)
        denom = dirs @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (self.offset - origins @ n) / denom
        hit_pts = origins + t[..., None] * dirs
        in_disc = np.linalg.norm(hit_pts - self.anchor, axis=-1) <= self.extent
        ok = (np.abs(denom) > 1e-12) & (t > _HIT_EPS) & in_disc
        return np.where(ok, t, np.inf)

    def y_range(self):
        return self.anchor[1] - self.extent, self.anchor[1] + self.extent


# ---------------------------------------------------------------------------
# Textures (unlit albedo)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Solid:
    rgb: tuple

    def color_at(self, pts, shape):
        return np.broadcast_to(np.asarray(self.rgb, dtype=np.float64), pts.shape).copy()


@dataclass(frozen=True)
class Checker:
    """3D world-space checkerboard with cubic cells."""

    rgb_a: tuple
    rgb_b: tuple
    cell_size: float

    def color_at(self, pts, shape):
        parity = np.sum(np.floor(pts / self.cell_size), axis=-1).astype(np.int64) & 1
        a = np.asarray(self.rgb_a, dtype=np.float64)
        b = np.asarray(self.rgb_b, dtype=np.float64)
        return np.where(parity[..., None] == 0, a, b)


@dataclass(frozen=True)
class AxisGradient:
    """Linear blend along world +y over the shape's vertical extent."""

    rgb_lo: tuple
    rgb_hi: tuple

    def color_at(self, pts, shape):
        lo, hi = shape.y_range()
        span = max(hi - lo, 1e-12)
        t = np.clip((pts[..., 1] - lo) / span, 0.0, 1.0)[..., None]
        a = np.asarray(self.rgb_lo, dtype=np.float64)
        b = np.asarray(self.rgb_hi, dtype=np.float64)
        return a + t * (b - a)


@dataclass(frozen=True)
class Primitive:
    shape: object
    texture: object


@dataclass(frozen=True)
class SceneDesc:
    primitives: tuple
    background_rgb: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "primitives", tuple(self.primitives))
        object.__setattr__(self, "background_rgb", tuple(float(c) for c in self.background_rgb))


# ---------------------------------------------------------------------------
# Tracing
# ---------------------------------------------------------------------------

def trace_rays(scene: SceneDesc, origins: np.ndarray, dirs: np.ndarray):
    """Nearest-hit depth and albedo color for a batch of rays.

    Returns (depth (N,), rgb (N, 3)); misses give (inf, background).
    """
    origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    n = origins.shape[0]
    depth = np.full(n, np.inf)
    winner = np.full(n, -1, dtype=np.int64)
    for i, prim in enumerate(scene.primitives):
        t = prim.shape.intersect(origins, dirs)
        closer = t < depth
        depth = np.where(closer, t, depth)
        winner = np.where(closer, i, winner)
    rgb = np.broadcast_to(np.asarray(scene.background_rgb, dtype=np.float64), (n, 3)).copy()
    for i, prim in enumerate(scene.primitives):
        mask = winner == i
        if np.any(mask):
            pts = origins[mask] + depth[mask, None] * dirs[mask]
            rgb[mask] = prim.texture.color_at(pts, prim.shape)
    return depth, rgb


def trace_ray(scene: SceneDesc, ray: Ray):
    """Single-ray wrapper; returns (depth or inf, rgb)."""
    depth, rgb = trace_rays(scene, ray.origin[None, :], ray.dir[None, :])
    return float(depth[0]), rgb[0]


def render_fisheye_gt(scene: SceneDesc, cam: FisheyeCamera):
    """Ground-truth fisheye image; pixels outside the image circle are black.

    Returns (image (H, W, 3) float64 in [0,1], mask (H, W) bool).
    """
    mask = cam.circle_mask()
    vidx, uidx = np.nonzero(mask)
    uv = np.stack([uidx, vidx], axis=-1).astype(np.float64)
    origins, dirs = unproject_fisheye_batch(cam, uv)
    dirs = dirs / np.linalg.norm(dirs, axis=-1, keepdims=True)
    _, rgb = trace_rays(scene, origins, dirs)
    img = np.zeros((cam.height, cam.width, 3), dtype=np.float64)
    img[vidx, uidx] = rgb
    return img, mask


def render_panorama_depth_gt(scene: SceneDesc, width: int, height: int,
                             origin: Optional[np.ndarray] = None):
    """Inverse-depth panorama at the rig origin (or ``origin``); misses are 0."""
    dirs = equirect_dir_grid(width, height).reshape(-1, 3)
    o = np.zeros(3) if origin is None else np.asarray(origin, dtype=np.float64)
    origins = np.broadcast_to(o, dirs.shape)
    depth, _ = trace_rays(scene, origins, dirs)
    with np.errstate(divide="ignore"):
        inv = np.where(np.isinf(depth), 0.0, 1.0 / depth)
    return inv.reshape(height, width)


def render_panorama_rgb_gt(scene: SceneDesc, width: int, height: int,
                           origin: Optional[np.ndarray] = None):
    """Albedo panorama at the rig origin (or ``origin``)."""
    dirs = equirect_dir_grid(width, height).reshape(-1, 3)
    o = np.zeros(3) if origin is None else np.asarray(origin, dtype=np.float64)
    origins = np.broadcast_to(o, dirs.shape)
    _, rgb = trace_rays(scene, origins, dirs)
    return rgb.reshape(height, width, 3)


# ---------------------------------------------------------------------------
# Rig and bundle
# ---------------------------------------------------------------------------

def default_rig(image_size: int = 320, fov_deg: float = 220.0,
                circle_diameter: float = 0.4):
    """Four outward-facing fisheyes on a horizontal circle.

    Cameras sit at azimuths 0/90/180/270 degrees; each camera's +z axis
    points outward, +x is the horizontal tangent, +y points down (image v
    grows downward).
    """
    r = circle_diameter / 2.0
    fov = math.radians(fov_deg)
    focal = (image_size / 2.0 - 2.0) / (fov / 2.0)
    cx = (image_size - 1) / 2.0
    cams = []
    for k in range(4):
        az = k * math.pi / 2.0
        fwd = np.array([math.cos(az), 0.0, math.sin(az)])
        down = np.array([0.0, -1.0, 0.0])
        right = np.cross(down, fwd)
        rot = np.stack([right, down, fwd], axis=1)  # columns = cam axes in rig frame
        pose = Pose(position=r * fwd, quat=_quat_from_matrix_safe(rot))
        cams.append(FisheyeCamera(width=image_size, height=image_size, focal=focal,
                                  principal_point=(cx, cx), fov_max=fov,
                                  pose_rig_from_cam=pose))
    return cams


def _quat_from_matrix_safe(m):
    from .geometry import matrix_to_quat
    return matrix_to_quat(m)


def default_room_scene(seed: int = 0) -> SceneDesc:
    """Seeded checker-walled room with a few interior objects.

    The room is an axis-aligned box with half-extents in [1, 3] m; interior
    objects keep at least 0.7 m clearance from the rig origin so all scene
    content stays within the representable inverse-depth range.
    """
    rng = np.random.default_rng(seed)
    hx, hy, hz = rng.uniform(1.0, 3.0, size=3)
    # Moderate checker contrast: wall texture carries the matching signal
    # without letting edge aliasing dominate image metrics.
    base = rng.uniform(0.35, 0.55, 3)
    room = Primitive(
        shape=Box(bmin=(-hx, -hy, -hz), bmax=(hx, hy, hz)),
        texture=Checker(rgb_a=tuple(np.clip(base + rng.uniform(0.08, 0.16, 3), 0, 1)),
                        rgb_b=tuple(np.clip(base - rng.uniform(0.08, 0.16, 3), 0, 1)),
                        cell_size=float(rng.uniform(0.6, 1.0))),
    )
    prims = [room]
    n_objects = int(rng.integers(2, 6))
    for _ in range(n_objects):
        # Place the object center far enough out that the whole object
        # clears the origin, but inside the room.
        size = float(rng.uniform(0.15, 0.45))
        dir_ = rng.normal(size=3)
        dir_ /= np.linalg.norm(dir_)
        max_r = min(hx, hy, hz) - size - 0.05
        dist = float(rng.uniform(0.7 + size, max(max_r, 0.75 + size)))
        center = dir_ * dist
        texture = _random_texture(rng)
        if rng.random() < 0.5:
            prims.append(Primitive(shape=Sphere(center=tuple(center), radius=size), texture=texture))
        else:
            half = rng.uniform(0.5, 1.0, 3) * size
            prims.append(Primitive(shape=Box(bmin=tuple(center - half), bmax=tuple(center + half)),
                                   texture=texture))
    return SceneDesc(primitives=tuple(prims), background_rgb=(0.0, 0.0, 0.0))


def _random_texture(rng):
    kind = rng.integers(0, 3)
    if kind == 0:
        return Solid(rgb=tuple(rng.uniform(0.15, 0.85, 3)))
    if kind == 1:
        base = rng.uniform(0.35, 0.55, 3)
        return Checker(rgb_a=tuple(np.clip(base + rng.uniform(0.08, 0.16, 3), 0, 1)),
                       rgb_b=tuple(np.clip(base - rng.uniform(0.08, 0.16, 3), 0, 1)),
                       cell_size=float(rng.uniform(0.2, 0.4)))
    return AxisGradient(rgb_lo=tuple(rng.uniform(0.1, 0.5, 3)),
                        rgb_hi=tuple(rng.uniform(0.5, 0.9, 3)))


@dataclass
class SampleBundle:
    """One training unit: four fisheye views plus center ground truth."""

    images: list                 # 4 x (H, W, 3) float in [0, 1]
    masks: list                  # 4 x (H, W) bool, inside image circle
    cameras: list                # 4 x FisheyeCamera
    gt_inv_depth: np.ndarray     # (Hp, Wp) inverse depth, m^-1
    gt_panorama_rgb: Optional[np.ndarray] = None  # (Hp, Wp, 3), evaluation only

    def __post_init__(self):
        for img, cam in zip(self.images, self.cameras):
            if img.shape[:2] != (cam.height, cam.width):
                raise ValueError("image dimensions do not match camera declaration")

    @property
    def pano_height(self) -> int:
        return self.gt_inv_depth.shape[0]

    @property
    def pano_width(self) -> int:
        return self.gt_inv_depth.shape[1]


def generate_bundle(scene: SceneDesc, cameras, pano_width: int = 256,
                    pano_height: int = 128, with_panorama_rgb: bool = True) -> SampleBundle:
    """Render the four fisheye inputs and center ground truths for a scene."""
    images, masks = [], []
    for cam in cameras:
        img, mask = render_fisheye_gt(scene, cam)
        images.append(img)
        masks.append(mask)
    # float32 is the canonical ground-truth precision (PFM storage)
    gt_inv = render_panorama_depth_gt(scene, pano_width, pano_height).astype(np.float32)
    gt_rgb = render_panorama_rgb_gt(scene, pano_width, pano_height) if with_panorama_rgb else None
    return SampleBundle(images=images, masks=masks, cameras=list(cameras),
                        gt_inv_depth=gt_inv, gt_panorama_rgb=gt_rgb)
