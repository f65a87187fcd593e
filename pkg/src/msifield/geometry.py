"""Camera models, spherical parameterization, sphere schedule, ray-sphere math.

Conventions used throughout the package:

* World/rig frame: +y is up.  Azimuth ``theta`` is measured in the xz-plane
  starting at +x and increasing toward +z; elevation ``phi`` increases
  toward +y.  A unit direction is ``(cos(phi)cos(theta), sin(phi),
  cos(phi)sin(theta))``.
* Equirectangular images: column ``u`` spans theta in [0, 2pi), row ``v``
  spans phi from +pi/2 (top) down to -pi/2, pixel-center convention.
* Fisheye cameras use the equidistant model ``r_px = focal * alpha`` where
  ``alpha`` is the angle to the +z optical axis; this stays invertible past
  180 degrees of field of view.
* Pixel coordinates are continuous with integer values at pixel centers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi


class OutOfVolumeError(ValueError):
    """A query pose or ray origin lies outside the reconstruction volume."""


def normalize(v: np.ndarray) -> np.ndarray:
    """Return v / ||v|| along the last axis."""
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / n


# ---------------------------------------------------------------------------
# Quaternions (w, x, y, z) and poses
# ---------------------------------------------------------------------------

def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q)

def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])

def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])

def quat_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = normalize(axis)
    half = 0.5 * angle
    return np.concatenate(([math.cos(half)], math.sin(half) * axis))

def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = quat_normalize(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])

def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    """Rotation matrix to unit quaternion (w, x, y, z)."""
    m = np.asarray(m, dtype=np.float64)
    t = np.trace(m)
    if t > 0:
        s = math.sqrt(t + 1.0) * 2
        q = np.array([0.25 * s, (m[2, 1] - m[1, 2]) / s,
                      (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s])
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        q = np.array([(m[2, 1] - m[1, 2]) / s, 0.25 * s,
                      (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s])
    elif m[1, 1] > m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        q = np.array([(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s,
                      0.25 * s, (m[1, 2] + m[2, 1]) / s])
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        q = np.array([(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s,
                      (m[1, 2] + m[2, 1]) / s, 0.25 * s])
    return quat_normalize(q)


@dataclass(frozen=True)
class Pose:
    """Rigid transform mapping local-frame points into the parent frame."""

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    quat: np.ndarray = field(default_factory=lambda: np.array([1.0, 0, 0, 0]))

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64))
        q = np.asarray(self.quat, dtype=np.float64)
        if abs(np.linalg.norm(q) - 1.0) > 1e-9:
            raise ValueError("quaternion must be unit norm")
        object.__setattr__(self, "quat", q)

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.quat)

    def transform_point(self, p: np.ndarray) -> np.ndarray:
        return np.asarray(p, dtype=np.float64) @ self.rotation.T + self.position

    def rotate(self, v: np.ndarray) -> np.ndarray:
        return np.asarray(v, dtype=np.float64) @ self.rotation.T

    def inverse(self) -> "Pose":
        q_inv = quat_conjugate(self.quat)
        r_inv = quat_to_matrix(q_inv)
        return Pose(position=-(r_inv @ self.position), quat=quat_normalize(q_inv))

    @staticmethod
    def identity() -> "Pose":
        return Pose()


# ---------------------------------------------------------------------------
# Spherical parameterization
# ---------------------------------------------------------------------------

def unit_ray_from_spherical(theta, phi) -> np.ndarray:
    """Unit direction for azimuth theta and elevation phi.

    Accepts scalars or broadcastable arrays; vectors are stacked on the
    last axis.
    """
    theta = np.asarray(theta, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    cp = np.cos(phi)
    return np.stack(np.broadcast_arrays(cp * np.cos(theta), np.sin(phi), cp * np.sin(theta)), axis=-1)


def spherical_from_unit_ray(v: np.ndarray):
    """Inverse of :func:`unit_ray_from_spherical`.

    theta is canonicalized to [0, 2pi).  At the poles (|phi| = pi/2) theta
    is 0 by convention.
    """
    v = np.asarray(v, dtype=np.float64)
    theta = np.mod(np.arctan2(v[..., 2], v[..., 0]), TWO_PI)
    phi = np.arcsin(np.clip(v[..., 1], -1.0, 1.0))
    return theta, phi


def equirect_dir(width: int, height: int, u, v):
    """(theta, phi) at equirectangular pixel (u, v), pixel-center convention."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    theta = TWO_PI * (u + 0.5) / width
    phi = 0.5 * math.pi - math.pi * (v + 0.5) / height
    return theta, phi


def equirect_uv(width: int, height: int, theta, phi):
    """Continuous pixel coordinates for (theta, phi); inverse of equirect_dir."""
    theta = np.asarray(theta, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    u = theta * width / TWO_PI - 0.5
    v = (0.5 - phi / math.pi) * height - 0.5
    return u, v


def equirect_dir_grid(width: int, height: int) -> np.ndarray:
    """(height, width, 3) unit directions at all pixel centers."""
    u, v = np.meshgrid(np.arange(width), np.arange(height))
    theta, phi = equirect_dir(width, height, u, v)
    return unit_ray_from_spherical(theta, phi)


# ---------------------------------------------------------------------------
# Fisheye camera (equidistant model)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FisheyeCamera:
    width: int
    height: int
    focal: float              # pixels per radian of incident angle
    principal_point: tuple    # (cx, cy) pixels
    fov_max: float            # full field of view, radians
    pose_rig_from_cam: Pose = field(default_factory=Pose.identity)

    def __post_init__(self):
        if not 0.0 < self.fov_max < TWO_PI:
            raise ValueError("fov_max must be in (0, 2pi)")
        if self.focal <= 0:
            raise ValueError("focal must be positive")
        object.__setattr__(self, "principal_point",
                           (float(self.principal_point[0]), float(self.principal_point[1])))
        cx, cy = self.principal_point
        margin = min(cx, cy, self.width - 1 - cx, self.height - 1 - cy)
        if self.circle_radius > margin + 1e-9:
            raise ValueError("image circle exceeds the usable image region")

    @property
    def circle_radius(self) -> float:
        """Image-circle radius in pixels for the declared field of view."""
        return self.focal * self.fov_max / 2.0

    def pixel_in_circle(self, u, v) -> np.ndarray:
        cx, cy = self.principal_point
        return np.hypot(np.asarray(u, dtype=np.float64) - cx,
                        np.asarray(v, dtype=np.float64) - cy) <= self.circle_radius

    def circle_mask(self) -> np.ndarray:
        """(height, width) bool mask of pixels inside the image circle."""
        u, v = np.meshgrid(np.arange(self.width), np.arange(self.height))
        return self.pixel_in_circle(u, v)


def project_fisheye_batch(cam: FisheyeCamera, points_rig: np.ndarray):
    """Project rig-frame points into pixel coordinates.

    Returns (uv (N, 2), valid (N,)).  A point is valid when its incident
    angle is within the field of view and the pixel lands inside the image
    bounds; points at the optical center are invalid.
    """
    points_rig = np.atleast_2d(np.asarray(points_rig, dtype=np.float64))
    inv = cam.pose_rig_from_cam.inverse()
    pc = points_rig @ inv.rotation.T + inv.position
    rxy = np.hypot(pc[:, 0], pc[:, 1])
    alpha = np.arctan2(rxy, pc[:, 2])
    dist = np.linalg.norm(pc, axis=1)

    cx, cy = cam.principal_point
    r_px = cam.focal * alpha
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(rxy > 0, r_px / np.where(rxy > 0, rxy, 1.0), 0.0)
    u = cx + scale * pc[:, 0]
    v = cy + scale * pc[:, 1]
    uv = np.stack([u, v], axis=-1)

    valid = (dist > 1e-12) & (alpha <= cam.fov_max / 2.0)
    valid &= (u >= 0) & (u <= cam.width - 1) & (v >= 0) & (v <= cam.height - 1)
    return uv, valid


def project_fisheye(cam: FisheyeCamera, point_rig: np.ndarray):
    """Single-point wrapper around :func:`project_fisheye_batch`."""
    uv, valid = project_fisheye_batch(cam, np.asarray(point_rig)[None, :])
    return (float(uv[0, 0]), float(uv[0, 1])), bool(valid[0])


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    dir: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64))
        d = np.asarray(self.dir, dtype=np.float64)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ValueError("ray direction must be unit norm")
        object.__setattr__(self, "dir", d)


def unproject_fisheye_batch(cam: FisheyeCamera, uv: np.ndarray):
    """Rig-frame origins and unit directions for pixel coordinates.

    Raises ValueError if any pixel lies outside the image circle.
    """
    uv = np.atleast_2d(np.asarray(uv, dtype=np.float64))
    cx, cy = cam.principal_point
    du = uv[:, 0] - cx
    dv = uv[:, 1] - cy
    r_px = np.hypot(du, dv)
    if np.any(r_px > cam.circle_radius * (1 + 1e-12)):
        raise ValueError("pixel outside the image circle")
    alpha = r_px / cam.focal
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.where(r_px > 0, np.sin(alpha) / np.where(r_px > 0, r_px, 1.0), 0.0)
    dirs_cam = np.stack([du * t, dv * t, np.cos(alpha)], axis=-1)
    pose = cam.pose_rig_from_cam
    dirs = dirs_cam @ pose.rotation.T
    origins = np.broadcast_to(pose.position, dirs.shape)
    return origins, dirs


def unproject_fisheye(cam: FisheyeCamera, pixel) -> Ray:
    """Single-pixel wrapper around :func:`unproject_fisheye_batch`."""
    origins, dirs = unproject_fisheye_batch(cam, np.asarray(pixel, dtype=np.float64)[None, :])
    return Ray(origin=origins[0], dir=normalize(dirs[0]))


# ---------------------------------------------------------------------------
# Sphere layer schedule and ray-sphere intersection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SphereSchedule:
    """Concentric sphere layers uniform in inverse depth.

    Layer n has inverse depth n * d_inv_max / (n_layers - 1); layer 0 (the
    nominally infinite background) is substituted with eps_background so the
    intersection math stays finite.
    """

    n_layers: int
    d_inv_max: float
    eps_background: float = 1e-3

    def __post_init__(self):
        if self.n_layers < 2:
            raise ValueError("need at least 2 layers")
        # canonicalize to 32-bit precision so the artifact header (32-bit
        # fields) round-trips losslessly
        object.__setattr__(self, "d_inv_max", float(np.float32(self.d_inv_max)))
        object.__setattr__(self, "eps_background", float(np.float32(self.eps_background)))
        if not self.d_inv_max > self.eps_background > 0:
            raise ValueError("require d_inv_max > eps_background > 0")

    def inv_depths(self) -> np.ndarray:
        """(n_layers,) inverse depths, ascending; index 0 is the background."""
        d = np.arange(self.n_layers, dtype=np.float64) * self.d_inv_max / (self.n_layers - 1)
        d[0] = self.eps_background
        return d

    def radii(self) -> np.ndarray:
        """(n_layers,) sphere radii in meters, descending."""
        return 1.0 / self.inv_depths()

    @property
    def background_radius(self) -> float:
        return 1.0 / self.eps_background


def sphere_layer_radii(schedule: SphereSchedule) -> np.ndarray:
    return schedule.radii()


def intersect_sphere(ray: Ray, radius: float):
    """Distance along the ray to the centered sphere, or None.

    Only rays starting strictly inside the sphere intersect; then the
    forward root of the quadratic is returned.
    """
    o, d = ray.origin, ray.dir
    if np.dot(o, o) >= radius * radius:
        return None
    a = float(np.dot(d, d))
    b = 2.0 * float(np.dot(d, o))
    c = float(np.dot(o, o)) - radius * radius
    disc = b * b - 4.0 * a * c
    return (-b + math.sqrt(disc)) / (2.0 * a)


def intersect_spheres_batch(origins: np.ndarray, dirs: np.ndarray, radii: np.ndarray):
    """Vectorized sphere intersection.

    Returns (z (N, L), inside (N, L)) where inside marks origins strictly
    inside each sphere; z is meaningful only where inside is True.
    """
    origins = np.asarray(origins, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    radii = np.asarray(radii, dtype=np.float64)
    oo = np.sum(origins * origins, axis=-1, keepdims=True)
    b = 2.0 * np.sum(origins * dirs, axis=-1, keepdims=True)
    c = oo - radii[None, :] ** 2
    inside = oo < radii[None, :] ** 2
    disc = np.maximum(b * b - 4.0 * c, 0.0)
    z = 0.5 * (-b + np.sqrt(disc))
    return z, inside
