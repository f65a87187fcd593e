# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: fused explicit-grid rendering and training step.

Contract mirrors msifield.kernels.reference.  Loops run layer-outer so each
sphere layer's grid plane stays cache-resident; coordinate and activation
math uses float32 transcendentals (the reference twin keeps float64, tests
bound the difference).

Forward passes and the Adam update parallelize over rays/elements with no
cross-thread accumulation, so results are bit-identical for any thread
count; the gradient scatter runs single-threaded in a fixed order.
"""

import numpy as np

cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport asinf, atan2f, expf, fabs, pow, sqrt, sqrtf

cnp.import_array()

cdef double TWO_PI = 6.283185307179586
cdef double PI_D = 3.141592653589793


cdef struct Corners:
    Py_ssize_t i00
    Py_ssize_t i01
    float du
    float dv


cdef inline float _sigmoidf(float x) nogil:
    cdef float e
    if x >= 0.0:
        return 1.0 / (1.0 + expf(-x))
    e = expf(x)
    return e / (1.0 + e)


cdef inline Corners _corners(float px, float py, float pz, float rn_inv,
                             float wscale, float hscale, float voff,
                             Py_ssize_t h, Py_ssize_t w) nogil:
    """Seam-wrapped, pole-clamped bilinear corners for a point on a sphere.

    i00/i01 are flat within-plane indices of the (v0,u0) and (v0,u1)
    corners; the v0+1 row is the same index plus the row stride.
    """
    cdef Corners c
    cdef float uf = atan2f(pz, px) * wscale - 0.5
    if uf < 0.0:
        uf += <float>w
    cdef Py_ssize_t u0i = <Py_ssize_t>uf
    if u0i >= w:
        u0i = w - 1
    c.du = uf - <float>u0i
    cdef Py_ssize_t u1i = u0i + 1
    if u1i == w:
        u1i = 0

    cdef float s = py * rn_inv
    if s > 1.0:
        s = 1.0
    elif s < -1.0:
        s = -1.0
    cdef float vf = voff - asinf(s) * hscale
    if vf < 0.0:
        vf = 0.0
    if vf > <float>(h - 1):
        vf = <float>(h - 1)
    cdef Py_ssize_t v0i = <Py_ssize_t>vf
    if v0i > h - 2:
        v0i = h - 2
    c.dv = vf - <float>v0i
    c.i00 = v0i * w + u0i
    c.i01 = v0i * w + u1i
    return c


def render_batch(float[:, :, ::1] occ_logit, float[:, :, :, ::1] color_logit,
                 double[::1] radii, double[::1] inv_depths,
                 double[:, ::1] origins, double[:, ::1] dirs,
                 bint want_color=True, double t_stop=0.0):
    """Composited (rgb, inv_depth, acc) for a ray batch on the explicit grid."""
    cdef Py_ssize_t L = occ_logit.shape[0]
    cdef Py_ssize_t H = occ_logit.shape[1]
    cdef Py_ssize_t W = occ_logit.shape[2]
    cdef Py_ssize_t R = origins.shape[0]

    rgb_arr = np.zeros((R, 3), dtype=np.float64)
    inv_arr = np.zeros(R, dtype=np.float64)
    acc_arr = np.zeros(R, dtype=np.float64)
    t_np = np.ones(R, dtype=np.float64)
    oo_np = np.empty(R, dtype=np.float64)
    hb_np = np.empty(R, dtype=np.float64)
    nstart_np = np.empty(R, dtype=np.int64)

    cdef double[:, ::1] rgb = rgb_arr
    cdef double[::1] inv = inv_arr
    cdef double[::1] acc = acc_arr
    cdef double[::1] tarr = t_np
    cdef double[::1] oov = oo_np
    cdef double[::1] hbv = hb_np
    cdef long[::1] nstart = nstart_np

    cdef float wscale = <float>(W / TWO_PI)
    cdef float hscale = <float>(H / PI_D)
    cdef float voff = <float>(0.5 * H - 0.5)

    cdef Py_ssize_t r, n, ch
    cdef long ns
    cdef double oo, hb, rn, z, disc, t, wd
    cdef float px, py, pz, rn_inv, top, bot, od, cf
    cdef Corners co
    cdef const float* op
    cdef const float* cp

    # Layer-outer walk keeps one grid plane cache-resident regardless of
    # how incoherent the ray set is; all state is per-ray, fixed order.
    with nogil:
        for r in range(R):
            oo = origins[r, 0] * origins[r, 0] + origins[r, 1] * origins[r, 1] + origins[r, 2] * origins[r, 2]
            hb = origins[r, 0] * dirs[r, 0] + origins[r, 1] * dirs[r, 1] + origins[r, 2] * dirs[r, 2]
            oov[r] = oo
            hbv[r] = hb
            ns = L - 1
            while ns >= 0 and radii[ns] * radii[ns] <= oo:
                ns -= 1
            nstart[r] = ns

        for n in range(L - 1, -1, -1):
            rn = radii[n]
            rn_inv = <float>(1.0 / rn)
            op = &occ_logit[n, 0, 0]
            cp = &color_logit[n, 0, 0, 0]
            for r in range(R):
                if n > nstart[r]:
                    continue
                t = tarr[r]
                if t < t_stop:
                    continue
                oo = oov[r]
                hb = hbv[r]
                disc = hb * hb - oo + rn * rn
                if disc < 0.0:
                    disc = 0.0
                z = -hb + sqrt(disc)
                px = <float>(origins[r, 0] + z * dirs[r, 0])
                py = <float>(origins[r, 1] + z * dirs[r, 1])
                pz = <float>(origins[r, 2] + z * dirs[r, 2])
                co = _corners(px, py, pz, rn_inv, wscale, hscale, voff, H, W)
                top = op[co.i00] + (op[co.i01] - op[co.i00]) * co.du
                bot = op[co.i00 + W] + (op[co.i01 + W] - op[co.i00 + W]) * co.du
                od = _sigmoidf(top + (bot - top) * co.dv)
                wd = (<double>od) * t
                tarr[r] = t * (1.0 - <double>od)
                if z > 0.0:
                    inv[r] += wd / z
                acc[r] += wd
                if want_color:
                    for ch in range(3):
                        top = cp[co.i00 * 3 + ch] + (cp[co.i01 * 3 + ch] - cp[co.i00 * 3 + ch]) * co.du
                        bot = cp[(co.i00 + W) * 3 + ch] + (cp[(co.i01 + W) * 3 + ch] - cp[(co.i00 + W) * 3 + ch]) * co.du
                        cf = _sigmoidf(top + (bot - top) * co.dv)
                        rgb[r, ch] += wd * (<double>cf)

    return rgb_arr, inv_arr, acc_arr


def train_step(float[:, :, ::1] occ_logit, float[:, :, :, ::1] color_logit,
               float[:, :, ::1] g_occ, float[:, :, :, ::1] g_color,
               double[::1] radii, double[::1] inv_depths,
               double[:, ::1] f_origins, double[:, ::1] f_dirs, float[:, ::1] f_rgb,
               double[:, ::1] p_dirs, float[::1] p_target,
               double lambda_d, double t_stop):
    """Fused forward + backward for one optimization step.

    Same contract as the reference kernel: fisheye rays supervise color,
    rig-centered panorama rays supervise inverse depth; gradients
    accumulate into g_occ / g_color; returns (loss, loss_color, loss_depth).
    """
    cdef Py_ssize_t L = occ_logit.shape[0]
    cdef Py_ssize_t H = occ_logit.shape[1]
    cdef Py_ssize_t W = occ_logit.shape[2]
    cdef Py_ssize_t RF = f_origins.shape[0]
    cdef Py_ssize_t RP = p_dirs.shape[0]

    cdef float wscale = <float>(W / TWO_PI)
    cdef float hscale = <float>(H / PI_D)
    cdef float voff = <float>(0.5 * H - 0.5)

    # --- fisheye stream ---------------------------------------------------------
    s_o_np = np.empty((L, RF), dtype=np.float32)
    s_w_np = np.empty((L, RF), dtype=np.float32)
    s_c_np = np.empty((L, RF, 3), dtype=np.float32)
    s_i00_np = np.empty((L, RF), dtype=np.int32)
    s_i01_np = np.empty((L, RF), dtype=np.int32)
    s_du_np = np.empty((L, RF), dtype=np.float32)
    s_dv_np = np.empty((L, RF), dtype=np.float32)
    nstart_np = np.empty(RF, dtype=np.int64)
    oo_np = np.empty(RF, dtype=np.float64)
    hb_np = np.empty(RF, dtype=np.float64)
    t_np = np.ones(RF, dtype=np.float64)
    crgb_np = np.zeros((RF, 3), dtype=np.float64)
    gc_np = np.empty((RF, 3), dtype=np.float64)
    pref_np = np.zeros((RF, 3), dtype=np.float64)

    cdef float[:, ::1] s_o = s_o_np
    cdef float[:, ::1] s_w = s_w_np
    cdef float[:, :, ::1] s_c = s_c_np
    cdef cnp.int32_t[:, ::1] s_i00 = s_i00_np
    cdef cnp.int32_t[:, ::1] s_i01 = s_i01_np
    cdef float[:, ::1] s_du = s_du_np
    cdef float[:, ::1] s_dv = s_dv_np
    cdef long[::1] nstart = nstart_np
    cdef double[::1] oov = oo_np
    cdef double[::1] hbv = hb_np
    cdef double[::1] tarr = t_np
    cdef double[:, ::1] crgb = crgb_np
    cdef double[:, ::1] gc = gc_np
    cdef double[:, ::1] pref = pref_np

    cdef Py_ssize_t r, n, ch, i00, i01
    cdef long ns
    cdef double oo, hb, rn, z, disc, t, wd, om
    cdef double docc, dol, suffix, tail, dcl, diff, lc, ld, w00, w01, w10, w11
    cdef float px, py, pz, du, dv, rn_inv, top, bot, of, wf, cf
    cdef Corners co
    cdef const float* op
    cdef const float* cp
    cdef float* gop
    cdef float* gcp

    with nogil:
        for r in range(RF):
            oo = f_origins[r, 0] * f_origins[r, 0] + f_origins[r, 1] * f_origins[r, 1] + f_origins[r, 2] * f_origins[r, 2]
            hb = f_origins[r, 0] * f_dirs[r, 0] + f_origins[r, 1] * f_dirs[r, 1] + f_origins[r, 2] * f_dirs[r, 2]
            oov[r] = oo
            hbv[r] = hb
            ns = L - 1
            while ns >= 0 and radii[ns] * radii[ns] <= oo:
                ns = ns - 1
            nstart[r] = ns

        # forward (parallel over rays; all writes are per-(n,r) or per-r)
        for n in range(L - 1, -1, -1):
            rn = radii[n]
            rn_inv = <float>(1.0 / rn)
            op = &occ_logit[n, 0, 0]
            cp = &color_logit[n, 0, 0, 0]
            for r in range(RF):
                if n > nstart[r]:
                    continue
                t = tarr[r]
                if t < t_stop:
                    continue
                oo = oov[r]
                hb = hbv[r]
                disc = hb * hb - oo + rn * rn
                if disc < 0.0:
                    disc = 0.0
                z = -hb + sqrt(disc)
                px = <float>(f_origins[r, 0] + z * f_dirs[r, 0])
                py = <float>(f_origins[r, 1] + z * f_dirs[r, 1])
                pz = <float>(f_origins[r, 2] + z * f_dirs[r, 2])
                co = _corners(px, py, pz, rn_inv, wscale, hscale, voff, H, W)
                s_du[n, r] = co.du
                s_dv[n, r] = co.dv
                s_i00[n, r] = <cnp.int32_t>co.i00
                s_i01[n, r] = <cnp.int32_t>co.i01
                top = op[co.i00] + (op[co.i01] - op[co.i00]) * co.du
                bot = op[co.i00 + W] + (op[co.i01 + W] - op[co.i00 + W]) * co.du
                of = _sigmoidf(top + (bot - top) * co.dv)
                s_o[n, r] = of
                wd = (<double>of) * t
                wf = <float>wd
                s_w[n, r] = wf
                tarr[r] = t * (1.0 - <double>of)
                for ch in range(3):
                    top = cp[co.i00 * 3 + ch] + (cp[co.i01 * 3 + ch] - cp[co.i00 * 3 + ch]) * co.du
                    bot = cp[(co.i00 + W) * 3 + ch] + (cp[(co.i01 + W) * 3 + ch] - cp[(co.i00 + W) * 3 + ch]) * co.du
                    cf = _sigmoidf(top + (bot - top) * co.dv)
                    s_c[n, r, ch] = cf
                    crgb[r, ch] += (<double>wf) * (<double>cf)

        lc = 0.0
        for r in range(RF):
            for ch in range(3):
                diff = crgb[r, ch] - <double>f_rgb[r, ch]
                lc += diff * diff
                gc[r, ch] = 2.0 * diff / RF
        lc /= RF

        # backward (serial: scatter into shared gradient planes)
        for r in range(RF):
            tarr[r] = 1.0
        for n in range(L - 1, -1, -1):
            gop = &g_occ[n, 0, 0]
            gcp = &g_color[n, 0, 0, 0]
            for r in range(RF):
                if n > nstart[r]:
                    continue
                t = tarr[r]
                if t < t_stop:
                    continue
                of = s_o[n, r]
                wf = s_w[n, r]
                om = 1.0 - <double>of
                du = s_du[n, r]
                dv = s_dv[n, r]
                i00 = s_i00[n, r]
                i01 = s_i01[n, r]
                w00 = (1.0 - <double>du) * (1.0 - <double>dv)
                w01 = (<double>du) * (1.0 - <double>dv)
                w10 = (1.0 - <double>du) * (<double>dv)
                w11 = (<double>du) * (<double>dv)
                docc = 0.0
                for ch in range(3):
                    cf = s_c[n, r, ch]
                    pref[r, ch] += (<double>wf) * (<double>cf)
                    suffix = crgb[r, ch] - pref[r, ch]
                    tail = suffix / om if om > 0.0 else 0.0
                    docc += gc[r, ch] * (t * (<double>cf) - tail)
                    dcl = gc[r, ch] * (<double>wf) * (<double>cf) * (1.0 - <double>cf)
                    gcp[i00 * 3 + ch] += <float>(dcl * w00)
                    gcp[i01 * 3 + ch] += <float>(dcl * w01)
                    gcp[(i00 + W) * 3 + ch] += <float>(dcl * w10)
                    gcp[(i01 + W) * 3 + ch] += <float>(dcl * w11)
                dol = docc * (<double>of) * om
                gop[i00] += <float>(dol * w00)
                gop[i01] += <float>(dol * w01)
                gop[i00 + W] += <float>(dol * w10)
                gop[i01 + W] += <float>(dol * w11)
                tarr[r] = t * om

    # --- panorama stream ---------------------------------------------------------
    p_o_np = np.empty((L, RP), dtype=np.float32)
    p_w_np = np.empty((L, RP), dtype=np.float32)
    pi00_np = np.empty(RP, dtype=np.int32)
    pi01_np = np.empty(RP, dtype=np.int32)
    pdu_np = np.empty(RP, dtype=np.float32)
    pdv_np = np.empty(RP, dtype=np.float32)
    pt_np = np.ones(RP, dtype=np.float64)
    dhat_np = np.zeros(RP, dtype=np.float64)
    gd_np = np.empty(RP, dtype=np.float64)
    prefd_np = np.zeros(RP, dtype=np.float64)
    zinv_np = np.empty(L, dtype=np.float64)

    cdef float[:, ::1] p_o = p_o_np
    cdef float[:, ::1] p_w = p_w_np
    cdef cnp.int32_t[::1] pi00 = pi00_np
    cdef cnp.int32_t[::1] pi01 = pi01_np
    cdef float[::1] pdu = pdu_np
    cdef float[::1] pdv = pdv_np
    cdef double[::1] ptr = pt_np
    cdef double[::1] dhat = dhat_np
    cdef double[::1] gd = gd_np
    cdef double[::1] prefd = prefd_np
    cdef double[::1] zinv = zinv_np
    cdef double invd

    with nogil:
        for n in range(L):
            zinv[n] = 1.0 / sqrt(radii[n] * radii[n])
        for r in range(RP):
            co = _corners(<float>p_dirs[r, 0], <float>p_dirs[r, 1], <float>p_dirs[r, 2],
                          1.0, wscale, hscale, voff, H, W)
            pdu[r] = co.du
            pdv[r] = co.dv
            pi00[r] = <cnp.int32_t>co.i00
            pi01[r] = <cnp.int32_t>co.i01

        for n in range(L - 1, -1, -1):
            invd = zinv[n]
            op = &occ_logit[n, 0, 0]
            for r in range(RP):
                t = ptr[r]
                if t < t_stop:
                    continue
                du = pdu[r]
                dv = pdv[r]
                i00 = pi00[r]
                i01 = pi01[r]
                top = op[i00] + (op[i01] - op[i00]) * du
                bot = op[i00 + W] + (op[i01 + W] - op[i00 + W]) * du
                of = _sigmoidf(top + (bot - top) * dv)
                p_o[n, r] = of
                wd = (<double>of) * t
                wf = <float>wd
                p_w[n, r] = wf
                ptr[r] = t * (1.0 - <double>of)
                dhat[r] += (<double>wf) * invd

        ld = 0.0
        for r in range(RP):
            diff = dhat[r] - <double>p_target[r]
            ld += fabs(diff)
            if diff > 0.0:
                gd[r] = lambda_d / RP
            elif diff < 0.0:
                gd[r] = -lambda_d / RP
            else:
                gd[r] = 0.0
        ld /= RP

        for r in range(RP):
            ptr[r] = 1.0
        for n in range(L - 1, -1, -1):
            invd = zinv[n]
            gop = &g_occ[n, 0, 0]
            for r in range(RP):
                t = ptr[r]
                if t < t_stop:
                    continue
                of = p_o[n, r]
                wf = p_w[n, r]
                om = 1.0 - <double>of
                prefd[r] += (<double>wf) * invd
                suffix = dhat[r] - prefd[r]
                tail = suffix / om if om > 0.0 else 0.0
                docc = gd[r] * (t * invd - tail)
                dol = docc * (<double>of) * om
                du = pdu[r]
                dv = pdv[r]
                i00 = pi00[r]
                i01 = pi01[r]
                gop[i00] += <float>(dol * (1.0 - <double>du) * (1.0 - <double>dv))
                gop[i01] += <float>(dol * (<double>du) * (1.0 - <double>dv))
                gop[i00 + W] += <float>(dol * (1.0 - <double>du) * (<double>dv))
                gop[i01 + W] += <float>(dol * (<double>du) * (<double>dv))
                ptr[r] = t * om

    cdef double loss = lc + lambda_d * ld
    return loss, lc, ld


def adam_step_dense(float[::1] param, float[::1] grad, float[::1] m, float[::1] v,
                    double lr, double beta1, double beta2, double eps, long t,
                    bint zero_grad=False):
    """In-place bias-corrected Adam over flat float32 arrays (float32 math).

    With zero_grad, the gradient buffer is cleared after being consumed.
    Element-wise independent, so the parallel loop is bit-deterministic.
    """
    cdef Py_ssize_t n = param.shape[0]
    cdef float b1 = <float>beta1
    cdef float b2 = <float>beta2
    cdef float ib1 = <float>(1.0 - beta1)
    cdef float ib2 = <float>(1.0 - beta2)
    cdef float bc1 = <float>(1.0 - pow(beta1, t))
    cdef float bc2 = <float>(1.0 - pow(beta2, t))
    cdef float lrf = <float>lr
    cdef float epsf = <float>eps
    cdef Py_ssize_t i
    cdef float g, md, vd
    with nogil:
        for i in prange(n, schedule="static"):
            g = grad[i]
            md = b1 * m[i] + ib1 * g
            vd = b2 * v[i] + ib2 * g * g
            m[i] = md
            v[i] = vd
            param[i] = param[i] - lrf * (md / bc1) / (sqrtf(vd / bc2) + epsf)
            if zero_grad:
                grad[i] = 0.0
