"""On-disk formats: PFM depth maps, PNG images, the MSI artifact container,
and the JSON schemas for scenes, rigs, and bundle manifests.

Everything binary is little-endian.  PFM files follow the standard
convention (scale -1.0, scanlines bottom to top) and store inverse depth
in m^-1.
"""

from __future__ import annotations

import json
import math
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .field import MlpParams
from .geometry import FisheyeCamera, Pose, SphereSchedule
from .msi import MsiGrid
from .scene import (
    AxisGradient,
    Box,
    Checker,
    Disc,
    Primitive,
    SceneDesc,
    Solid,
    Sphere,
)

ARTIFACT_MAGIC = b"MSI1"
_FLAG_SWEPT = 1
_FLAG_MLP = 2


# ---------------------------------------------------------------------------
# PFM / PNG
# ---------------------------------------------------------------------------

def write_pfm(path, data: np.ndarray):
    """Single-channel 32-bit float PFM, little-endian, bottom-up rows."""
    data = np.asarray(data, dtype=np.float32)
    if data.ndim != 2:
        raise ValueError("PFM writer expects a single-channel 2D array")
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(np.flipud(data).astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        if f.readline().strip() != b"Pf":
            raise ValueError("not a single-channel PFM file")
        w, h = map(int, f.readline().split())
        scale = float(f.readline())
        data = np.frombuffer(f.read(w * h * 4), dtype="<f4" if scale < 0 else ">f4")
    return np.flipud(data.reshape(h, w)).copy()


def write_png(path, img: np.ndarray):
    """8-bit PNG from floats in [0, 1]; 2D arrays become grayscale."""
    arr = np.asarray(img, dtype=np.float64)
    q = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(q, mode="RGB" if q.ndim == 3 else "L").save(path, format="PNG")


def png_bytes(img: np.ndarray) -> bytes:
    import io
    arr = np.asarray(img, dtype=np.float64)
    q = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(q, mode="RGB" if q.ndim == 3 else "L").save(buf, format="PNG")
    return buf.getvalue()


def read_png(path) -> np.ndarray:
    img = np.asarray(Image.open(path))
    return img.astype(np.float64) / 255.0


# ---------------------------------------------------------------------------
# Artifact container
# ---------------------------------------------------------------------------

def write_artifact(path, grid: MsiGrid, mlp: MlpParams | None = None,
                   include_swept: bool = False):
    """Serialize learnable channels (and optionally sweep / MLP weights)."""
    if include_swept and not grid.has_swept:
        raise ValueError("grid has no swept channels to include")
    flags = (_FLAG_SWEPT if include_swept else 0) | (_FLAG_MLP if mlp is not None else 0)
    n_cams = grid.n_cameras if include_swept else 0
    with open(path, "wb") as f:
        f.write(ARTIFACT_MAGIC)
        f.write(struct.pack("<7I", 1, grid.n_layers, grid.height, grid.width,
                            n_cams, 0, flags))
        f.write(struct.pack("<2f", grid.schedule.d_inv_max, grid.schedule.eps_background))
        f.write(np.ascontiguousarray(grid.occ_logit, dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(grid.color_logit, dtype="<f4").tobytes())
        if include_swept:
            f.write(np.ascontiguousarray(grid.swept_rgb, dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(grid.swept_valid, dtype=np.uint8).tobytes())
        if mlp is not None:
            arrays = mlp.flat_arrays()
            f.write(struct.pack("<4I", mlp.l_pos, mlp.l_dir, mlp.feat_dim, len(arrays)))
            for a in arrays:
                a = np.asarray(a)
                f.write(struct.pack("<I", a.ndim))
                f.write(struct.pack(f"<{a.ndim}I", *a.shape))
                f.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


class ArtifactError(ValueError):
    """Corrupt or truncated artifact file."""


def _read_exact(f, n: int) -> bytes:
    b = f.read(n)
    if len(b) != n:
        raise ArtifactError("truncated artifact")
    return b


def read_artifact(path):
    """Returns (grid, mlp_or_None)."""
    with open(path, "rb") as f:
        if _read_exact(f, 4) != ARTIFACT_MAGIC:
            raise ArtifactError("bad magic")
        version, n_layers, height, width, n_cams, _feat, flags = struct.unpack(
            "<7I", _read_exact(f, 28))
        if version != 1:
            raise ArtifactError(f"unsupported artifact version {version}")
        if n_layers < 2 or height < 2 or width < 2:
            raise ArtifactError("implausible artifact dimensions")
        d_inv_max, eps_background = struct.unpack("<2f", _read_exact(f, 8))
        schedule = SphereSchedule(n_layers=n_layers, d_inv_max=d_inv_max,
                                  eps_background=eps_background)
        n = n_layers * height * width
        occ = np.frombuffer(_read_exact(f, 4 * n), dtype="<f4").reshape(
            n_layers, height, width).copy()
        col = np.frombuffer(_read_exact(f, 12 * n), dtype="<f4").reshape(
            n_layers, height, width, 3).copy()
        swept_rgb = swept_valid = None
        if flags & _FLAG_SWEPT:
            swept_rgb = np.frombuffer(_read_exact(f, 12 * n * n_cams), dtype="<f4").reshape(
                n_cams, n_layers, height, width, 3).copy()
            swept_valid = np.frombuffer(_read_exact(f, n * n_cams), dtype=np.uint8).reshape(
                n_cams, n_layers, height, width).astype(bool)
        mlp = None
        if flags & _FLAG_MLP:
            l_pos, l_dir, feat_dim, n_arrays = struct.unpack("<4I", _read_exact(f, 16))
            arrays = []
            for _ in range(n_arrays):
                ndim, = struct.unpack("<I", _read_exact(f, 4))
                shape = struct.unpack(f"<{ndim}I", _read_exact(f, 4 * ndim))
                count = int(np.prod(shape)) if shape else 1
                arrays.append(np.frombuffer(_read_exact(f, 4 * count), dtype="<f4")
                              .reshape(shape).astype(np.float64))
            pairs = [(arrays[i], arrays[i + 1]) for i in range(0, len(arrays), 2)]
            mlp = MlpParams(stage1=pairs[:3], stage2=pairs[3:],
                            l_pos=l_pos, l_dir=l_dir, feat_dim=feat_dim)
    grid = MsiGrid(schedule=schedule, height=height, width=width,
                   occ_logit=occ, color_logit=col,
                   swept_rgb=swept_rgb, swept_valid=swept_valid)
    return grid, mlp


# ---------------------------------------------------------------------------
# Scene JSON
# ---------------------------------------------------------------------------

def scene_to_dict(scene: SceneDesc) -> dict:
    prims = []
    for p in scene.primitives:
        s = p.shape
        if isinstance(s, Sphere):
            shape = {"type": "sphere", "center": list(s.center), "radius": s.radius}
        elif isinstance(s, Box):
            shape = {"type": "box", "min": list(s.bmin), "max": list(s.bmax)}
        elif isinstance(s, Disc):
            shape = {"type": "plane", "normal": list(s.normal), "offset": s.offset,
                     "extent": s.extent}
        else:
            raise TypeError(f"unknown shape {s!r}")
        t = p.texture
        if isinstance(t, Solid):
            tex = {"type": "solid", "rgb": list(t.rgb)}
        elif isinstance(t, Checker):
            tex = {"type": "checker", "rgb_a": list(t.rgb_a), "rgb_b": list(t.rgb_b),
                   "cell_size": t.cell_size}
        elif isinstance(t, AxisGradient):
            tex = {"type": "axis_gradient", "rgb_lo": list(t.rgb_lo), "rgb_hi": list(t.rgb_hi)}
        else:
            raise TypeError(f"unknown texture {t!r}")
        prims.append({"shape": shape, "texture": tex})
    return {"background_rgb": list(scene.background_rgb), "primitives": prims}


def scene_from_dict(d: dict) -> SceneDesc:
    prims = []
    for pd in d["primitives"]:
        sd = pd["shape"]
        kind = sd["type"]
        if kind == "sphere":
            shape = Sphere(center=tuple(sd["center"]), radius=float(sd["radius"]))
        elif kind == "box":
            shape = Box(bmin=tuple(sd["min"]), bmax=tuple(sd["max"]))
        elif kind == "plane":
            shape = Disc(normal=tuple(sd["normal"]), offset=float(sd["offset"]),
                         extent=float(sd["extent"]))
        else:
            raise ValueError(f"unknown shape type {kind!r}")
        td = pd["texture"]
        kind = td["type"]
        if kind == "solid":
            tex = Solid(rgb=tuple(td["rgb"]))
        elif kind == "checker":
            tex = Checker(rgb_a=tuple(td["rgb_a"]), rgb_b=tuple(td["rgb_b"]),
                          cell_size=float(td["cell_size"]))
        elif kind == "axis_gradient":
            tex = AxisGradient(rgb_lo=tuple(td["rgb_lo"]), rgb_hi=tuple(td["rgb_hi"]))
        else:
            raise ValueError(f"unknown texture type {kind!r}")
        prims.append(Primitive(shape=shape, texture=tex))
    return SceneDesc(primitives=tuple(prims),
                     background_rgb=tuple(d.get("background_rgb", (0, 0, 0))))


def save_scene(path, scene: SceneDesc):
    Path(path).write_text(json.dumps(scene_to_dict(scene), indent=2))


def load_scene(path) -> SceneDesc:
    return scene_from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# Rig JSON
# ---------------------------------------------------------------------------

def rig_to_dict(cameras) -> dict:
    out = []
    for cam in cameras:
        out.append({
            "width": cam.width, "height": cam.height, "focal": cam.focal,
            "principal_point": list(cam.principal_point),
            "fov_deg": math.degrees(cam.fov_max),
            "position": list(cam.pose_rig_from_cam.position),
            "quat_wxyz": list(cam.pose_rig_from_cam.quat),
        })
    return {"cameras": out}


def rig_from_dict(d: dict):
    cams = []
    for cd in d["cameras"]:
        pose = Pose(position=np.array(cd["position"], dtype=np.float64),
                    quat=np.array(cd["quat_wxyz"], dtype=np.float64))
        cams.append(FisheyeCamera(
            width=int(cd["width"]), height=int(cd["height"]), focal=float(cd["focal"]),
            principal_point=tuple(cd["principal_point"]),
            fov_max=math.radians(float(cd["fov_deg"])),
            pose_rig_from_cam=pose))
    return cams


def save_rig(path, cameras):
    Path(path).write_text(json.dumps(rig_to_dict(cameras), indent=2))


def load_rig(path):
    return rig_from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# Bundle on disk
# ---------------------------------------------------------------------------

def save_bundle(out_dir, bundle, scene: SceneDesc | None = None, seed=None):
    """Write images, ground truth, and manifest; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    image_names = []
    for k, img in enumerate(bundle.images):
        name = f"cam{k}.png"
        write_png(out / name, img)
        image_names.append(name)
    write_pfm(out / "gt_inv_depth.pfm", bundle.gt_inv_depth)
    manifest = {
        "images": image_names,
        "gt_inv_depth": "gt_inv_depth.pfm",
        "pano_width": bundle.pano_width,
        "pano_height": bundle.pano_height,
        "rig": rig_to_dict(bundle.cameras),
        "seed": seed,
    }
    if bundle.gt_panorama_rgb is not None:
        write_png(out / "gt_panorama.png", bundle.gt_panorama_rgb)
        manifest["gt_panorama_rgb"] = "gt_panorama.png"
    if scene is not None:
        manifest["scene"] = scene_to_dict(scene)
    path = out / "bundle.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path


def load_bundle(manifest_path):
    """Returns (bundle, scene_or_None); image colors are PNG-quantized."""
    from .scene import SampleBundle
    mdir = Path(manifest_path).parent
    manifest = json.loads(Path(manifest_path).read_text())
    cameras = rig_from_dict(manifest["rig"])
    images = [read_png(mdir / name) for name in manifest["images"]]
    masks = [cam.circle_mask() for cam in cameras]
    gt_inv = read_pfm(mdir / manifest["gt_inv_depth"])
    gt_rgb = None
    if manifest.get("gt_panorama_rgb"):
        gt_rgb = read_png(mdir / manifest["gt_panorama_rgb"])
    scene = scene_from_dict(manifest["scene"]) if "scene" in manifest else None
    bundle = SampleBundle(images=images, masks=masks, cameras=cameras,
                          gt_inv_depth=gt_inv, gt_panorama_rgb=gt_rgb)
    return bundle, scene
