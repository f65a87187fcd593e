"""Pure-numpy kernels: vectorized twin of the compiled extension.

Sample points are ray/sphere-layer intersections taken near-to-far; a ray
can stop early once its transmittance falls below ``t_stop`` (0 disables).
Composited inverse depth uses 1/z with z the distance along the ray, which
equals the layer's inverse depth for rays from the rig center.

Gradient accumulation uses ordered ``bincount`` reductions, so repeated
calls with identical inputs are bit-identical.
"""

from __future__ import annotations

import numpy as np


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _equirect_corners(height, width, theta, phi):
    """Seam-wrapped / pole-clamped bilinear corners for (theta, phi) arrays."""
    u = theta * (width / (2.0 * np.pi)) - 0.5
    u = np.mod(u, width)
    u0 = np.floor(u).astype(np.int64)
    du = u - u0
    u0 = np.mod(u0, width)
    u1 = np.mod(u0 + 1, width)
    v = (0.5 - phi / np.pi) * height - 0.5
    v = np.clip(v, 0.0, height - 1.0)
    v0 = np.minimum(np.floor(v).astype(np.int64), height - 2)
    v0 = np.maximum(v0, 0)
    dv = v - v0
    return v0, v0 + 1, u0, u1, dv, du


def _gather_bilinear(plane_flat, base_idx00, base_idx01, base_idx10, base_idx11, dv, du):
    p00 = plane_flat[base_idx00]
    p01 = plane_flat[base_idx01]
    p10 = plane_flat[base_idx10]
    p11 = plane_flat[base_idx11]
    top = p00 + (p01 - p00) * du
    bot = p10 + (p11 - p10) * du
    return top + (bot - top) * dv


def _forward(occ_logit, color_logit, radii, origins, dirs, want_color, t_stop):
    """Shared forward pass; returns composited outputs plus intermediates."""
    L, H, W = occ_logit.shape
    origins = np.asarray(origins, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    R = origins.shape[0]

    ns = np.arange(L - 1, -1, -1)              # near-to-far = descending radius index
    r_ord = np.asarray(radii, dtype=np.float64)[ns]
    oo = np.sum(origins * origins, axis=1)
    hb = np.sum(origins * dirs, axis=1)

    inside = oo[:, None] < r_ord[None, :] ** 2
    disc = np.maximum(hb[:, None] ** 2 - oo[:, None] + r_ord[None, :] ** 2, 0.0)
    z = -hb[:, None] + np.sqrt(disc)
    pts = origins[:, None, :] + z[..., None] * dirs[:, None, :]

    theta = np.arctan2(pts[..., 2], pts[..., 0])
    sinphi = np.clip(pts[..., 1] / r_ord[None, :], -1.0, 1.0)
    phi = np.arcsin(sinphi)

    v0, v1, u0, u1, dv, du = _equirect_corners(H, W, theta, phi)
    nidx = np.broadcast_to(ns[None, :], (R, L))
    base = nidx * (H * W)
    i00 = base + v0 * W + u0
    i01 = base + v0 * W + u1
    i10 = base + v1 * W + u0
    i11 = base + v1 * W + u1

    occ_flat = np.asarray(occ_logit, dtype=np.float64).ravel()
    ol = _gather_bilinear(occ_flat, i00, i01, i10, i11, dv, du)
    occ = _sigmoid(ol) * inside

    if t_stop > 0.0:
        texcl_raw = np.cumprod(1.0 - occ, axis=1)
        texcl_raw = np.concatenate([np.ones((R, 1)), texcl_raw[:, :-1]], axis=1)
        occ = occ * (texcl_raw >= t_stop)

    t_incl = np.cumprod(1.0 - occ, axis=1)
    texcl = np.concatenate([np.ones((R, 1)), t_incl[:, :-1]], axis=1)
    w = occ * texcl

    c = None
    if want_color:
        col = np.asarray(color_logit, dtype=np.float64).reshape(-1, 3)
        cl = np.stack([_gather_bilinear(col[:, ch], i00, i01, i10, i11, dv, du)
                       for ch in range(3)], axis=-1)
        c = _sigmoid(cl)

    z_safe = np.where(inside & (z > 0), z, 1.0)
    inv_d = np.where(inside, 1.0 / z_safe, 0.0)

    rgb = np.sum(w[..., None] * c, axis=1) if want_color else None
    inv_depth = np.sum(w * inv_d, axis=1)
    acc = np.sum(w, axis=1)
    inter = dict(occ=occ, texcl=texcl, w=w, c=c, inv_d=inv_d,
                 i00=i00, i01=i01, i10=i10, i11=i11, dv=dv, du=du)
    return rgb, inv_depth, acc, inter


def render_batch(occ_logit, color_logit, radii, inv_depths, origins, dirs,
                 want_color=True, t_stop=0.0):
    """Composited (rgb, inv_depth, acc) for a ray batch on the explicit grid."""
    rgb, inv_depth, acc, _ = _forward(occ_logit, color_logit, radii, origins, dirs,
                                      bool(want_color), float(t_stop))
    R = np.asarray(origins).shape[0] if np.asarray(origins).ndim == 2 else 1
    if rgb is None:
        rgb = np.zeros((R, 3))
    return rgb, inv_depth, acc


def _scatter(grad_flat, idx_list, val_list):
    idx = np.concatenate([i.ravel() for i in idx_list])
    val = np.concatenate([v.ravel() for v in val_list])
    np_acc = np.bincount(idx, weights=val, minlength=grad_flat.shape[0])
    grad_flat += np_acc.astype(grad_flat.dtype)


def _backprop_stream(inter, g_occ, g_color, up_rgb, up_depth):
    """Accumulate parameter gradients for one ray stream.

    up_rgb: (R, 3) upstream on composited rgb, or None.
    up_depth: (R,) upstream on composited inverse depth, or None.
    """
    occ, texcl, w, c = inter["occ"], inter["texcl"], inter["w"], inter["c"]
    inv_d = inter["inv_d"]
    i00, i01, i10, i11 = inter["i00"], inter["i01"], inter["i10"], inter["i11"]
    dv, du = inter["dv"], inter["du"]
    om = 1.0 - occ

    d_occ = np.zeros_like(occ)
    if up_rgb is not None:
        wc = w[..., None] * c
        prefix = np.cumsum(wc, axis=1)
        total = prefix[:, -1:, :]
        suffix = total - prefix
        with np.errstate(divide="ignore", invalid="ignore"):
            tail = np.where(om[..., None] > 0.0, suffix / np.where(om[..., None] > 0.0, om[..., None], 1.0), 0.0)
        d_occ += np.sum(up_rgb[:, None, :] * (texcl[..., None] * c - tail), axis=-1)
        d_c = up_rgb[:, None, :] * w[..., None]
        d_cl = d_c * c * (1.0 - c)
        w00 = ((1.0 - du) * (1.0 - dv))[..., None]
        w01 = (du * (1.0 - dv))[..., None]
        w10 = ((1.0 - du) * dv)[..., None]
        w11 = (du * dv)[..., None]
        gcol_flat = g_color.reshape(-1, 3)
        for ch in range(3):
            _scatter(gcol_flat[:, ch],
                     [i00, i01, i10, i11],
                     [d_cl[..., ch] * w00[..., 0], d_cl[..., ch] * w01[..., 0],
                      d_cl[..., ch] * w10[..., 0], d_cl[..., ch] * w11[..., 0]])
    if up_depth is not None:
        wd = w * inv_d
        prefix = np.cumsum(wd, axis=1)
        suffix = prefix[:, -1:] - prefix
        with np.errstate(divide="ignore", invalid="ignore"):
            tail = np.where(om > 0.0, suffix / np.where(om > 0.0, om, 1.0), 0.0)
        d_occ += up_depth[:, None] * (texcl * inv_d - tail)

    d_ol = d_occ * occ * om                     # occ==0 for skipped samples kills them
    w00 = (1.0 - du) * (1.0 - dv)
    w01 = du * (1.0 - dv)
    w10 = (1.0 - du) * dv
    w11 = du * dv
    _scatter(g_occ.ravel(),
             [i00, i01, i10, i11],
             [d_ol * w00, d_ol * w01, d_ol * w10, d_ol * w11])


def train_step(occ_logit, color_logit, g_occ, g_color, radii, inv_depths,
               f_origins, f_dirs, f_rgb, p_dirs, p_target, lambda_d, t_stop):
    """Fused forward + backward for one optimization step.

    Fisheye rays supervise color (squared L2 summed over channels, averaged
    over rays); panorama rays start at the rig center and supervise inverse
    depth (L1, averaged over rays).  Gradients accumulate into g_occ and
    g_color.  Returns (loss, loss_color, loss_depth).
    """
    rf = np.asarray(f_origins).shape[0]
    rp = np.asarray(p_dirs).shape[0]

    rgb, _, _, inter_f = _forward(occ_logit, color_logit, radii, f_origins, f_dirs,
                                  True, float(t_stop))
    diff = rgb - np.asarray(f_rgb, dtype=np.float64)
    loss_color = float(np.sum(diff * diff) / rf)
    up_rgb = 2.0 * diff / rf
    _backprop_stream(inter_f, g_occ, g_color, up_rgb, None)

    p_origins = np.zeros((rp, 3))
    _, inv_depth, _, inter_p = _forward(occ_logit, color_logit, radii, p_origins, p_dirs,
                                        False, float(t_stop))
    dd = inv_depth - np.asarray(p_target, dtype=np.float64)
    loss_depth = float(np.mean(np.abs(dd)))
    up_depth = float(lambda_d) * np.sign(dd) / rp
    _backprop_stream(inter_p, g_occ, g_color, None, up_depth)

    loss = loss_color + float(lambda_d) * loss_depth
    return loss, loss_color, loss_depth


def adam_step_dense(param, grad, m, v, lr, beta1, beta2, eps, t, zero_grad=False):
    """In-place bias-corrected Adam over flat float32 arrays (float32 math).

    Scalar factors are rounded to float32 up front so the arithmetic matches
    the compiled kernel operation for operation.  With zero_grad the
    gradient buffer is cleared after being consumed.
    """
    f32 = np.float32
    b1, b2 = f32(beta1), f32(beta2)
    ib1, ib2 = f32(1.0 - beta1), f32(1.0 - beta2)
    bc1 = f32(1.0 - beta1 ** t)
    bc2 = f32(1.0 - beta2 ** t)
    lrf, epsf = f32(lr), f32(eps)
    m[...] = b1 * m + ib1 * grad
    v[...] = b2 * v + ib2 * grad * grad
    param[...] = param - lrf * (m / bc1) / (np.sqrt(v / bc2) + epsf)
    if zero_grad:
        grad[...] = 0.0
