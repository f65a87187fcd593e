"""Multi-task fitting: ray batches, color+depth loss, Adam, and the fit loop.

Each iteration draws fresh pixel batches from the four fisheye inputs
(color supervision, squared L2 summed over channels and averaged over
rays) and from the center inverse-depth panorama (L1, averaged over rays);
the total loss is L_color + lambda_d * L_depth.  The explicit backend runs
through the fused kernels; the MLP backend backpropagates through the
compositor in numpy.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels
from .field import (
    FieldParams,
    MlpParams,
    build_feature_context,
    init_mlp_params,
    mlp_backward,
    mlp_eval_batch,
)
from .geometry import equirect_dir, unit_ray_from_spherical, unproject_fisheye_batch
from .msi import MsiGrid, project_colors
from .scene import SampleBundle

log = logging.getLogger(__name__)


class FitDivergenceError(RuntimeError):
    """The fit loss became non-finite."""


@dataclass
class TrainConfig:
    lr: float = 3e-4
    lambda_d: float = 5.0
    n_fisheye_rays: int = 8192
    n_panorama_rays: int = 8192
    iterations: int = 5000
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # Rays stop marching once transmittance drops below this; 0 disables.
    t_stop: float = 1e-4
    log_every: int = 100

    def __post_init__(self):
        if min(self.lr, self.n_fisheye_rays, self.n_panorama_rays, self.iterations) <= 0:
            raise ValueError("lr, ray counts, and iterations must be positive")
        if self.lambda_d < 0:
            raise ValueError("lambda_d must be non-negative")


@dataclass
class RayBatch:
    f_origins: np.ndarray   # (Rf, 3) at the source camera centers
    f_dirs: np.ndarray      # (Rf, 3)
    f_rgb: np.ndarray       # (Rf, 3) ground-truth pixel colors
    f_cams: np.ndarray      # (Rf,) source camera index
    f_pixels: np.ndarray    # (Rf, 2) source (u, v)
    p_dirs: np.ndarray      # (Rp, 3) from the rig center
    p_uv: np.ndarray        # (Rp, 2)
    p_inv_depth: np.ndarray  # (Rp,) ground-truth inverse depth


def _fisheye_pixel_pool(bundle: SampleBundle):
    """(cam_idx, v, u) arrays over all in-circle pixels, cached on the bundle."""
    pool = getattr(bundle, "_fisheye_pool", None)
    if pool is None:
        cams, vs, us = [], [], []
        for k, mask in enumerate(bundle.masks):
            v, u = np.nonzero(mask)
            cams.append(np.full(v.shape, k, dtype=np.int64))
            vs.append(v)
            us.append(u)
        pool = (np.concatenate(cams), np.concatenate(vs), np.concatenate(us))
        bundle._fisheye_pool = pool
    return pool


def _choose(rng: np.random.Generator, pool_size: int, n: int):
    # Falls back to replacement when the request exceeds the pool.
    replace = n > pool_size
    return rng.choice(pool_size, size=n, replace=replace)


def _locality_order(dirs: np.ndarray) -> np.ndarray:
    """Stable sort by elevation band then azimuth: consecutive rays touch
    neighboring grid cells, which keeps the layer-outer kernel walks local."""
    theta = np.mod(np.arctan2(dirs[:, 2], dirs[:, 0]), 2.0 * np.pi)
    phi = np.arcsin(np.clip(dirs[:, 1], -1.0, 1.0))
    return np.lexsort((theta, np.round(phi * 16.0)))


def sample_ray_batch(bundle: SampleBundle, config: TrainConfig,
                     rng: np.random.Generator) -> RayBatch:
    """Uniform pixel batches: fisheye rays within the image circles, panorama
    rays over the center depth map.  Without replacement inside each stream
    unless the request exceeds the pixel pool."""
    cam_idx, vs, us = _fisheye_pixel_pool(bundle)
    pick = _choose(rng, cam_idx.shape[0], config.n_fisheye_rays)
    pk_cam, pk_v, pk_u = cam_idx[pick], vs[pick], us[pick]

    nf = config.n_fisheye_rays
    f_origins = np.empty((nf, 3))
    f_dirs = np.empty((nf, 3))
    f_rgb = np.empty((nf, 3), dtype=np.float32)
    for k, cam in enumerate(bundle.cameras):
        sel = pk_cam == k
        if not np.any(sel):
            continue
        uv = np.stack([pk_u[sel], pk_v[sel]], axis=-1).astype(np.float64)
        o, d = unproject_fisheye_batch(cam, uv)
        f_origins[sel] = o
        f_dirs[sel] = d / np.linalg.norm(d, axis=1, keepdims=True)
        f_rgb[sel] = bundle.images[k][pk_v[sel], pk_u[sel]]

    hp, wp = bundle.gt_inv_depth.shape
    pickp = _choose(rng, hp * wp, config.n_panorama_rays)
    pv, pu = pickp // wp, pickp % wp
    theta, phi = equirect_dir(wp, hp, pu, pv)
    p_dirs = unit_ray_from_spherical(theta, phi)
    p_inv = bundle.gt_inv_depth[pv, pu].astype(np.float32)

    return RayBatch(f_origins=f_origins, f_dirs=f_dirs, f_rgb=f_rgb,
                    f_cams=pk_cam, f_pixels=np.stack([pk_u, pk_v], axis=-1),
                    p_dirs=p_dirs, p_uv=np.stack([pu, pv], axis=-1),
                    p_inv_depth=p_inv)


@dataclass
class RenderedRays:
    f_rgb: np.ndarray        # (Rf, 3) composited colors
    p_inv_depth: np.ndarray  # (Rp,) composited inverse depths


def loss(batch: RayBatch, rendered: RenderedRays, lambda_d: float):
    """(total, color, depth) losses for aligned batch and renders."""
    diff = np.asarray(rendered.f_rgb, dtype=np.float64) - batch.f_rgb
    l_color = float(np.sum(diff * diff) / diff.shape[0])
    dd = np.asarray(rendered.p_inv_depth, dtype=np.float64) - batch.p_inv_depth
    l_depth = float(np.mean(np.abs(dd)))
    return l_color + lambda_d * l_depth, l_color, l_depth


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @staticmethod
    def for_params(params: list) -> "AdamState":
        return AdamState(m=[np.zeros_like(p, dtype=np.float64) for p in params],
                         v=[np.zeros_like(p, dtype=np.float64) for p in params])


def adam_step(params: list, grads: list, state: AdamState, config: TrainConfig):
    """Standard bias-corrected Adam over a list of arrays, in place.

    A non-finite gradient skips the whole step (logged) and leaves the
    state untouched.
    """
    for g in grads:
        if not np.all(np.isfinite(g)):
            log.warning("adam_step: non-finite gradient, step skipped")
            return state
    state.t += 1
    bc1 = 1.0 - config.beta1 ** state.t
    bc2 = 1.0 - config.beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g = np.asarray(g, dtype=np.float64)
        m *= config.beta1
        m += (1.0 - config.beta1) * g
        v *= config.beta2
        v += (1.0 - config.beta2) * g * g
        p -= (config.lr * (m / bc1) / (np.sqrt(v / bc2) + config.eps)).astype(p.dtype)
    return state


# ---------------------------------------------------------------------------
# Compositing upstreams (shared by the MLP fit path)
# ---------------------------------------------------------------------------

def composite_upstream(occ, rgb, d_inv, up_rgb=None, up_depth=None):
    """Per-sample gradients through front-to-back compositing.

    occ (R, L), rgb (R, L, 3), d_inv (R, L); upstream on the composited
    color (R, 3) and/or inverse depth (R,).  Returns (d_occ (R, L),
    d_rgb (R, L, 3)).
    """
    occ = np.asarray(occ, dtype=np.float64)
    t_incl = np.cumprod(1.0 - occ, axis=1)
    t_excl = np.concatenate([np.ones((occ.shape[0], 1)), t_incl[:, :-1]], axis=1)
    w = occ * t_excl
    om = 1.0 - occ
    d_occ = np.zeros_like(occ)
    d_rgb = np.zeros_like(np.asarray(rgb, dtype=np.float64))
    if up_rgb is not None:
        wc = w[..., None] * rgb
        prefix = np.cumsum(wc, axis=1)
        suffix = prefix[:, -1:, :] - prefix
        tail = np.divide(suffix, om[..., None], out=np.zeros_like(suffix),
                         where=om[..., None] > 0)
        d_occ += np.sum(up_rgb[:, None, :] * (t_excl[..., None] * rgb - tail), axis=-1)
        d_rgb += up_rgb[:, None, :] * w[..., None]
    if up_depth is not None:
        wd = w * d_inv
        prefix = np.cumsum(wd, axis=1)
        suffix = prefix[:, -1:] - prefix
        tail = np.divide(suffix, om, out=np.zeros_like(suffix), where=om > 0)
        d_occ += up_depth[:, None] * (t_excl * d_inv - tail)
    return d_occ, d_rgb


def _mlp_stream_forward(params: FieldParams, images, cameras, origins, dirs):
    """Per-sample MLP evaluation along sphere intersections for a ray batch."""
    grid = params.grid
    radii = grid.schedule.radii()
    L = grid.schedule.n_layers
    ns = np.arange(L - 1, -1, -1)
    r_ord = radii[ns]
    m = origins.shape[0]
    oo = np.sum(origins * origins, axis=1)
    hb = np.sum(origins * dirs, axis=1)
    inside = oo[:, None] < r_ord[None, :] ** 2
    disc = np.maximum(hb[:, None] ** 2 - oo[:, None] + r_ord[None, :] ** 2, 0.0)
    z = -hb[:, None] + np.sqrt(disc)
    pts = origins[:, None, :] + z[..., None] * dirs[:, None, :]
    unit = pts / np.maximum(np.linalg.norm(pts, axis=-1, keepdims=True), 1e-12)
    from .geometry import spherical_from_unit_ray
    theta, phi = spherical_from_unit_ray(unit.reshape(-1, 3))
    layers = np.broadcast_to(ns[None, :], (m, L)).ravel()
    f_geo, f_appr = build_feature_context(grid, layers, theta, phi)
    c_proj, c_valid = project_colors(images, cameras, pts.reshape(-1, 3))
    dflat = np.broadcast_to(dirs[:, None, :], (m, L, 3)).reshape(-1, 3)
    occ, rgb, cache = mlp_eval_batch(params.mlp, pts.reshape(-1, 3), dflat,
                                     f_geo, f_appr, c_proj, c_valid.astype(np.float64),
                                     want_cache=True)
    occ = occ.reshape(m, L) * inside
    rgb = rgb.reshape(m, L, 3)
    z_safe = np.where(inside & (z > 0), z, 1.0)
    d_inv = np.where(inside, 1.0 / z_safe, 0.0)
    return occ, rgb, d_inv, inside, cache


def mlp_loss_and_grads(params: FieldParams, images, cameras, batch: RayBatch,
                       lambda_d: float):
    """Loss and MLP weight gradients for one batch (both supervision streams)."""
    rf = batch.f_origins.shape[0]
    rp = batch.p_dirs.shape[0]

    occ_f, rgb_f, dinv_f, inside_f, cache_f = _mlp_stream_forward(
        params, images, cameras, batch.f_origins, batch.f_dirs)
    t_excl_f = np.concatenate([np.ones((rf, 1)), np.cumprod(1.0 - occ_f, axis=1)[:, :-1]], axis=1)
    w_f = occ_f * t_excl_f
    chat = np.sum(w_f[..., None] * rgb_f, axis=1)
    diff = chat - batch.f_rgb
    l_color = float(np.sum(diff * diff) / rf)
    up_rgb = 2.0 * diff / rf
    d_occ_f, d_rgb_f = composite_upstream(occ_f, rgb_f, dinv_f, up_rgb=up_rgb)

    p_origins = np.zeros((rp, 3))
    occ_p, rgb_p, dinv_p, inside_p, cache_p = _mlp_stream_forward(
        params, images, cameras, p_origins, batch.p_dirs)
    t_excl_p = np.concatenate([np.ones((rp, 1)), np.cumprod(1.0 - occ_p, axis=1)[:, :-1]], axis=1)
    w_p = occ_p * t_excl_p
    dhat = np.sum(w_p * dinv_p, axis=1)
    dd = dhat - batch.p_inv_depth
    l_depth = float(np.mean(np.abs(dd)))
    up_depth = lambda_d * np.sign(dd) / rp
    d_occ_p, d_rgb_p = composite_upstream(occ_p, rgb_p, dinv_p, up_depth=up_depth)

    # Samples masked out by the inside test carry no gradient.
    d_occ_f *= inside_f
    d_occ_p *= inside_p
    g1 = mlp_backward(params.mlp, cache_f, d_occ_f.ravel(), d_rgb_f.reshape(-1, 3))
    g2 = mlp_backward(params.mlp, cache_p, d_occ_p.ravel(), d_rgb_p.reshape(-1, 3))
    grads = [(a + b, c + d) for (a, c), (b, d) in zip(g1, g2)]
    total = l_color + lambda_d * l_depth
    return total, l_color, l_depth, grads


# ---------------------------------------------------------------------------
# Fit loops
# ---------------------------------------------------------------------------

def fit(bundle: SampleBundle, grid: MsiGrid, backend: str = "explicit",
        config: Optional[TrainConfig] = None,
        mlp: Optional[MlpParams] = None):
    """Fit the field to one bundle; returns (FieldParams, loss history).

    History rows are (iteration, loss, loss_color, loss_depth); iteration 1
    is the first step.  A non-finite loss aborts with FitDivergenceError.
    The grid must be swept and initialized beforehand.
    """
    config = config or TrainConfig()
    rng = np.random.default_rng(config.seed)
    history = []

    if backend == "explicit":
        params = FieldParams(backend="explicit", grid=grid)
        occ = grid.occ_logit
        col = grid.color_logit
        if not (occ.flags.c_contiguous and col.flags.c_contiguous):
            raise ValueError("grid learnable channels must be C-contiguous")
        g_occ = np.zeros_like(occ)
        g_col = np.zeros_like(col)
        m_occ = np.zeros(occ.size, dtype=np.float32)
        v_occ = np.zeros(occ.size, dtype=np.float32)
        m_col = np.zeros(col.size, dtype=np.float32)
        v_col = np.zeros(col.size, dtype=np.float32)
        radii = np.ascontiguousarray(grid.schedule.radii())
        inv_depths = np.ascontiguousarray(grid.schedule.inv_depths())

        for it in range(1, config.iterations + 1):
            batch = sample_ray_batch(bundle, config, rng)
            of = _locality_order(batch.f_dirs)
            op = _locality_order(batch.p_dirs)
            l, lc, ld = kernels.train_step(
                occ, col, g_occ, g_col, radii, inv_depths,
                np.ascontiguousarray(batch.f_origins[of]),
                np.ascontiguousarray(batch.f_dirs[of]),
                np.ascontiguousarray(batch.f_rgb[of]),
                np.ascontiguousarray(batch.p_dirs[op]),
                np.ascontiguousarray(batch.p_inv_depth[op]),
                config.lambda_d, config.t_stop)
            if not np.isfinite(l):
                raise FitDivergenceError(f"loss became non-finite at iteration {it}")
            kernels.adam_step_dense(occ.ravel(), g_occ.ravel(), m_occ, v_occ,
                                    config.lr, config.beta1, config.beta2,
                                    config.eps, it, True)
            kernels.adam_step_dense(col.ravel(), g_col.ravel(), m_col, v_col,
                                    config.lr, config.beta1, config.beta2,
                                    config.eps, it, True)
            history.append((it, l, lc, ld))
            if config.log_every and it % config.log_every == 0:
                log.info("iter %d loss %.6f color %.6f depth %.6f", it, l, lc, ld)
        return params, history

    if backend == "mlp":
        if mlp is None:
            mlp = init_mlp_params(np.random.default_rng(config.seed + 1))
        params = FieldParams(backend="mlp", grid=grid, mlp=mlp)
        flat = params.mlp.flat_arrays()
        state = AdamState.for_params(flat)
        for it in range(1, config.iterations + 1):
            batch = sample_ray_batch(bundle, config, rng)
            l, lc, ld, grads = mlp_loss_and_grads(params, bundle.images,
                                                  bundle.cameras, batch,
                                                  config.lambda_d)
            if not np.isfinite(l):
                raise FitDivergenceError(f"loss became non-finite at iteration {it}")
            flat_grads = []
            for dw, db in grads:
                flat_grads.extend([dw, db])
            adam_step(flat, flat_grads, state, config)
            history.append((it, l, lc, ld))
            if config.log_every and it % config.log_every == 0:
                log.info("iter %d loss %.6f color %.6f depth %.6f", it, l, lc, ld)
        return params, history

    raise ValueError(f"unknown backend {backend!r}")
