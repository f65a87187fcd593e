"""Command-line driver: gen, fit, render, eval, serve.

Exit codes: 0 success, 1 usage error, 2 numeric failure (divergence or
out-of-volume pose).  Config files are JSON with the same keys as the
flags; flags override file values.  All commands are deterministic given
their inputs and seed.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import formats
from .field import FieldParams
from .geometry import OutOfVolumeError, Pose, SphereSchedule
from .metrics import DepthReport, ImageReport, depth_metrics, psnr, ssim
from .msi import init_learnable, init_occupancy_from_consistency, sphere_sweep
from .optim import FitDivergenceError, TrainConfig, fit
from .render import EquirectTarget, FisheyeTarget, PinholeTarget, render_view
from .scene import default_rig, default_room_scene, generate_bundle, render_panorama_rgb_gt

log = logging.getLogger(__name__)


class UsageError(ValueError):
    pass


def parse_pose(text: str) -> Pose:
    parts = [float(x) for x in text.split(",")]
    if len(parts) != 7:
        raise UsageError("pose must be px,py,pz,qw,qx,qy,qz")
    q = np.array(parts[3:], dtype=np.float64)
    n = np.linalg.norm(q)
    if n < 1e-9:
        raise UsageError("pose quaternion must be nonzero")
    return Pose(position=np.array(parts[:3]), quat=q / n)


def parse_size(text: str):
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError as e:
        raise UsageError("size must be WxH") from e


def parse_target(text: str, grid, cameras):
    """equirect[:WxH] | fisheye:K | pinhole:WxH:FOV"""
    parts = text.split(":")
    kind = parts[0]
    if kind == "equirect":
        if len(parts) == 2:
            w, h = parse_size(parts[1])
        else:
            w, h = grid.width, grid.height
        return EquirectTarget(width=w, height=h)
    if kind == "fisheye":
        if len(parts) != 2:
            raise UsageError("fisheye target needs a camera index, e.g. fisheye:0")
        if cameras is None:
            raise UsageError("fisheye target requires --rig or --bundle")
        k = int(parts[1])
        if not 0 <= k < len(cameras):
            raise UsageError(f"camera index {k} out of range")
        return FisheyeTarget(camera=cameras[k])
    if kind == "pinhole":
        if len(parts) != 3:
            raise UsageError("pinhole target is pinhole:WxH:FOV")
        w, h = parse_size(parts[1])
        return PinholeTarget(width=w, height=h, fov_deg=float(parts[2]))
    raise UsageError(f"unknown target {text!r}")


def _load_config(path):
    return json.loads(Path(path).read_text()) if path else {}


def _train_config(args, cfg: dict) -> TrainConfig:
    t = cfg.get("train", {})

    def pick(flag, key, default):
        return flag if flag is not None else t.get(key, default)

    return TrainConfig(
        lr=pick(args.lr, "lr", 3e-4),
        lambda_d=pick(args.lambda_d, "lambda_d", 5.0),
        n_fisheye_rays=int(t.get("n_fisheye_rays", 8192)),
        n_panorama_rays=int(t.get("n_panorama_rays", 8192)),
        iterations=int(pick(args.iters, "iterations", 5000)),
        seed=int(pick(args.seed, "seed", 0)),
        beta1=float(t.get("beta1", 0.9)),
        beta2=float(t.get("beta2", 0.999)),
        eps=float(t.get("eps", 1e-8)),
        t_stop=float(t.get("t_stop", 1e-4)),
    )


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_gen(args) -> int:
    cfg = _load_config(args.config)
    out = args.out or cfg.get("out")
    if not out:
        raise UsageError("--out (or an 'out' config key) is required")
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    scene_path = args.scene or cfg.get("scene")
    scene = formats.load_scene(scene_path) if scene_path else default_room_scene(seed)
    rig_path = args.rig or cfg.get("rig")
    cameras = formats.load_rig(rig_path) if rig_path else default_rig(image_size=args.fisheye_size)
    w, h = parse_size(args.pano_size)
    bundle = generate_bundle(scene, cameras, pano_width=w, pano_height=h)
    manifest = formats.save_bundle(out, bundle, scene=scene, seed=seed)
    print(f"wrote {manifest}")
    return 0


def cmd_fit(args) -> int:
    cfg = _load_config(args.config)
    out_path = args.out or cfg.get("out")
    if not out_path:
        raise UsageError("--out (or an 'out' config key) is required")
    bundle, _scene = formats.load_bundle(args.bundle)
    layers = args.layers if args.layers is not None else cfg.get("layers", 64)
    if args.msi_size is not None:
        w, h = parse_size(args.msi_size)
    else:
        w, h = cfg.get("msi_width", 256), cfg.get("msi_height", 128)
    d_inv_max = args.d_inv_max if args.d_inv_max is not None else cfg.get("d_inv_max", 2.0)
    eps_bg = cfg.get("eps_background", 1e-3)
    schedule = SphereSchedule(n_layers=layers, d_inv_max=d_inv_max, eps_background=eps_bg)
    train = _train_config(args, cfg)

    log.info("sweeping %d layers at %dx%d", layers, w, h)
    grid = sphere_sweep(bundle.images, bundle.cameras, schedule, h, w)
    init_learnable(grid)
    if args.consistency_init and args.backend == "explicit":
        init_occupancy_from_consistency(grid)
    params, history = fit(bundle, grid, backend=args.backend, config=train)

    out = Path(out_path)
    out.mkdir(parents=True, exist_ok=True)
    artifact = out / "artifact.msi"
    formats.write_artifact(artifact, grid, mlp=params.mlp,
                           include_swept=(args.backend == "mlp"))
    losses = out / "loss.csv"
    with open(losses, "w") as f:
        f.write(f"# lr={train.lr} lambda_d={train.lambda_d} iterations={train.iterations} "
                f"seed={train.seed} layers={layers} msi={w}x{h} backend={args.backend}\n")
        f.write("iteration,loss,loss_color,loss_depth\n")
        for row in history:
            f.write("%d,%.8f,%.8f,%.8f\n" % row)
    print(f"wrote {artifact} and {losses}; final loss {history[-1][1]:.6f}")
    return 0


def _load_artifact_params(args):
    grid, mlp = formats.read_artifact(args.artifact)
    backend = "mlp" if mlp is not None else "explicit"
    images, cameras = None, None
    if args.bundle:
        bundle, _ = formats.load_bundle(args.bundle)
        images, cameras = bundle.images, bundle.cameras
    if backend == "mlp" and images is None:
        raise UsageError("rendering an MLP artifact requires --bundle for projected colors")
    params = FieldParams(backend=backend, grid=grid, mlp=mlp)
    return params, images, cameras


def cmd_render(args) -> int:
    params, images, cameras = _load_artifact_params(args)
    if cameras is None and args.rig:
        cameras = formats.load_rig(args.rig)
    target = parse_target(args.target, params.grid, cameras)
    if args.poses:
        poses = [parse_pose(line) for line in Path(args.poses).read_text().splitlines()
                 if line.strip()]
    else:
        poses = [parse_pose(args.pose)]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    multi = len(poses) > 1
    for i, pose in enumerate(poses):
        rgb, inv, acc = render_view(params, images, cameras, target, pose)
        stem = f"{args.prefix}_{i:03d}" if multi else args.prefix
        formats.write_png(out / f"{stem}_rgb.png", rgb)
        formats.write_pfm(out / f"{stem}_inv_depth.pfm", inv)
        formats.write_png(out / f"{stem}_acc.png", acc)
    print(f"wrote {len(poses)} render(s) to {out}")
    return 0


def cmd_eval(args) -> int:
    params, images, cameras = _load_artifact_params(args)
    bundle, scene = formats.load_bundle(args.bundle)
    grid = params.grid
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    hp, wp = bundle.gt_inv_depth.shape
    _, inv, _ = render_view(params, images, cameras,
                            EquirectTarget(width=wp, height=hp), Pose.identity())
    depth = depth_metrics(inv, bundle.gt_inv_depth)
    (out / "depth_report.txt").write_text(depth.to_text())
    (out / "depth_report.csv").write_text(DepthReport.CSV_HEADER + "\n" + depth.csv_row() + "\n")

    image_report = None
    if args.holdout_views > 0:
        if scene is None:
            raise UsageError("held-out evaluation needs a bundle manifest with a scene")
        rng = np.random.default_rng(args.seed if args.seed is not None else 0)
        psnrs, ssims = [], []
        for _ in range(args.holdout_views):
            d = rng.normal(size=3)
            d /= np.linalg.norm(d)
            pose = Pose(position=d * args.holdout_radius)
            rgb, _, _ = render_view(params, images, cameras,
                                    EquirectTarget(width=wp, height=hp), pose)
            oracle = render_panorama_rgb_gt(scene, wp, hp, origin=pose.position)
            psnrs.append(psnr(rgb, oracle))
            ssims.append(ssim(rgb, oracle))
        image_report = ImageReport(psnr=float(np.mean(psnrs)), ssim=float(np.mean(ssims)))
        (out / "image_report.txt").write_text(image_report.to_text())
        (out / "image_report.csv").write_text(
            ImageReport.CSV_HEADER + "\n" + image_report.csv_row() + "\n")

    print(depth.to_text(), end="")
    if image_report:
        print(image_report.to_text(), end="")
    return 0


def cmd_serve(args) -> int:
    from .service import serve
    serve(artifact_path=args.artifact, host=args.host, port=args.port)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="msifield",
                                description="Multi-sphere-image radiance fields "
                                            "from four fisheye views")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="render a synthetic bundle to disk")
    g.add_argument("--scene", help="scene JSON (defaults to the seeded room scene)")
    g.add_argument("--rig", help="rig JSON (defaults to the 4x220-degree rig)")
    g.add_argument("--out", help="output directory (or 'out' in --config)")
    g.add_argument("--config")
    g.add_argument("--seed", type=int)
    g.add_argument("--pano-size", default="256x128")
    g.add_argument("--fisheye-size", type=int, default=320)
    g.set_defaults(func=cmd_gen)

    f = sub.add_parser("fit", help="fit a field to a generated bundle")
    f.add_argument("--bundle", required=True, help="bundle.json manifest path")
    f.add_argument("--out", help="output directory (or 'out' in --config)")
    f.add_argument("--config")
    f.add_argument("--backend", choices=("explicit", "mlp"), default="explicit")
    f.add_argument("--layers", type=int)
    f.add_argument("--msi-size")
    f.add_argument("--d-inv-max", type=float)
    f.add_argument("--lambda-d", type=float, dest="lambda_d")
    f.add_argument("--lr", type=float)
    f.add_argument("--iters", type=int)
    f.add_argument("--seed", type=int)
    f.add_argument("--no-consistency-init", dest="consistency_init",
                   action="store_false",
                   help="skip the photo-consistency occupancy warm start")
    f.set_defaults(func=cmd_fit, consistency_init=True)

    r = sub.add_parser("render", help="render views from a fitted artifact")
    r.add_argument("--artifact", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--pose", default="0,0,0,1,0,0,0")
    r.add_argument("--poses", help="file with one pose per line")
    r.add_argument("--target", default="equirect")
    r.add_argument("--bundle", help="bundle manifest (required for MLP artifacts)")
    r.add_argument("--rig", help="rig JSON for fisheye targets")
    r.add_argument("--prefix", default="render")
    r.set_defaults(func=cmd_render)

    e = sub.add_parser("eval", help="evaluate an artifact against ground truth")
    e.add_argument("--artifact", required=True)
    e.add_argument("--bundle", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--holdout-views", type=int, default=3)
    e.add_argument("--holdout-radius", type=float, default=0.15)
    e.add_argument("--seed", type=int)
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("serve", help="serve renders over HTTP")
    s.add_argument("--artifact", required=True)
    s.add_argument("--port", type=int, default=8080)
    s.add_argument("--host", default=None)
    s.set_defaults(func=cmd_serve)

    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 1
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (FileNotFoundError, json.JSONDecodeError, formats.ArtifactError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (FitDivergenceError, OutOfVolumeError, FloatingPointError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
