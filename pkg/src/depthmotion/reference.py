"""Loop-level reference evaluation of the snippet objective.

This is a second, independent forward implementation of every loss term
written as plain numba loops.  It serves as the function under
finite differences when verifying the autograd gradients of
:mod:`depthmotion.objective`: it shares no code with the torch path, and
fused loops make the tens of thousands of evaluations a full-resolution
check needs affordable.

Only the unmasked phase is covered; percentile masks are stop-gradient
weights and are not differentiated.
"""
from __future__ import annotations

import math

import numba
import numpy as np

from .objective import TERMS

_JIT = dict(cache=True, nogil=True)
MIN_Z = 1e-9
BOUND_SLACK = 1e-9


@numba.njit(**_JIT)
def _kadd(s, c, x):
    """One Neumaier step: running sum ``s`` with compensation ``c``."""
    t = s + x
    if abs(s) >= abs(x):
        c += (s - t) + x
    else:
        c += (x - t) + s
    return t, c


@numba.njit(**_JIT)
def _kmean(a):
    s = c = 0.0
    for x in a.ravel():
        s, c = _kadd(s, c, x)
    return (s + c) / a.size


@numba.njit(**_JIT)
def _rodrigues(w0, w1, w2):
    th2 = w0 * w0 + w1 * w1 + w2 * w2
    if th2 < 1e-8:
        a = 1.0 - th2 / 6.0
        b = 0.5 - th2 / 24.0
    else:
        th = math.sqrt(th2)
        a = math.sin(th) / th
        b = (1.0 - math.cos(th)) / th2
    r = np.empty((3, 3))
    # R = I + a [w]x + b [w]x^2 ; [w]x^2 = w w^T - th2 I
    r[0, 0] = 1.0 + b * (w0 * w0 - th2)
    r[1, 1] = 1.0 + b * (w1 * w1 - th2)
    r[2, 2] = 1.0 + b * (w2 * w2 - th2)
    r[0, 1] = -a * w2 + b * w0 * w1
    r[1, 0] = a * w2 + b * w0 * w1
    r[0, 2] = a * w1 + b * w0 * w2
    r[2, 0] = -a * w1 + b * w0 * w2
    r[1, 2] = -a * w0 + b * w1 * w2
    r[2, 1] = a * w0 + b * w1 * w2
    return r


@numba.njit(**_JIT)
def _bilinear(src, u, v):
    h, w = src.shape
    u = min(max(u, 0.0), w - 1.0)
    v = min(max(v, 0.0), h - 1.0)
    u0 = int(math.floor(u))
    v0 = int(math.floor(v))
    fu = u - u0
    fv = v - v0
    u1 = min(u0 + 1, w - 1)
    v1 = min(v0 + 1, h - 1)
    top = (1.0 - fu) * src[v0, u0] + fu * src[v0, u1]
    bot = (1.0 - fu) * src[v1, u0] + fu * src[v1, u1]
    return (1.0 - fv) * top + fv * bot


@numba.njit(**_JIT)
def _warp_sample(depth_a, img_b, depth_b, r, t, k, valid, syn_img, syn_depth):
    """Warp target ``a`` into source ``b``; fill mask, sampled image and depth."""
    fx, fy, cx, cy = k[0], k[1], k[2], k[3]
    h, w = depth_a.shape
    nc = img_b.shape[0]
    count = 0
    for i in range(h):
        yn = (i - cy) / fy
        for j in range(w):
            xn = (j - cx) / fx
            d = depth_a[i, j]
            x = d * (r[0, 0] * xn + r[0, 1] * yn + r[0, 2]) + t[0]
            y = d * (r[1, 0] * xn + r[1, 1] * yn + r[1, 2]) + t[1]
            z = d * (r[2, 0] * xn + r[2, 1] * yn + r[2, 2]) + t[2]
            ok = False
            if z > MIN_Z:
                us = fx * x / z + cx
                vs = fy * y / z + cy
                ok = (-BOUND_SLACK <= us <= w - 1 + BOUND_SLACK
                      and -BOUND_SLACK <= vs <= h - 1 + BOUND_SLACK)
            valid[i, j] = ok
            if ok:
                count += 1
                for c in range(nc):
                    syn_img[c, i, j] = _bilinear(img_b[c], us, vs)
                syn_depth[i, j] = _bilinear(depth_b, us, vs)
            else:
                for c in range(nc):
                    syn_img[c, i, j] = 0.0
                syn_depth[i, j] = 0.0
    return count


@numba.njit(**_JIT)
def _photometric(img_a, syn_img, valid, count, c1, c2):
    """Masked mean L1 and (1 - mean SSIM) / 2 over fully-valid 3x3 patches."""
    nc, h, w = img_a.shape
    l1 = l1c = 0.0
    for c in range(nc):
        for i in range(h):
            for j in range(w):
                if valid[i, j]:
                    l1, l1c = _kadd(l1, l1c, abs(syn_img[c, i, j] - img_a[c, i, j]))
    pixel = (l1 + l1c) / (nc * count) if count > 0 else 0.0
    total = tc = 0.0
    patches = 0
    for i in range(1, h - 1):
        for j in range(1, w - 1):
            full = True
            for di in range(-1, 2):
                for dj in range(-1, 2):
                    if not valid[i + di, j + dj]:
                        full = False
            if not full:
                continue
            patches += 1
            for c in range(nc):
                sx = sy = sxx = syy = sd = 0.0
                for di in range(-1, 2):
                    for dj in range(-1, 2):
                        a = syn_img[c, i + di, j + dj]
                        b = img_a[c, i + di, j + dj]
                        sx += a
                        sy += b
                        sd += a - b
                mx = sx / 9.0
                my = sy / 9.0
                dm = sd / 9.0
                dv = 0.0
                for di in range(-1, 2):
                    for dj in range(-1, 2):
                        a = syn_img[c, i + di, j + dj] - mx
                        b = img_a[c, i + di, j + dj] - my
                        sxx += a * a
                        syy += b * b
                        e = a - b
                        dv += e * e
                vx = sxx / 9.0
                vy = syy / 9.0
                dv /= 9.0
                # 1 - SSIM = (A C - B E) / (A C) with A - B = dm^2 and C - E = var(x - y),
                # written without the cancellation of the textbook form
                big_a = mx * mx + my * my + c1
                big_c = vx + vy + c2
                dis = (big_a * dv + dm * dm * (big_c - dv)) / (big_a * big_c)
                total, tc = _kadd(total, tc, dis)
    ssim = 0.5 * (total + tc) / (nc * patches) if patches > 0 else 0.0
    return pixel, ssim


@numba.njit(**_JIT)
def _epipolar(m, r, t, k):
    if math.sqrt(t[0] * t[0] + t[1] * t[1] + t[2] * t[2]) <= 1e-12:
        return 0.0
    # E = [t]x R
    e = np.empty((3, 3))
    for b in range(3):
        e[0, b] = -t[2] * r[1, b] + t[1] * r[2, b]
        e[1, b] = t[2] * r[0, b] - t[0] * r[2, b]
        e[2, b] = -t[1] * r[0, b] + t[0] * r[1, b]
    s = 0.0
    for n in range(m.shape[0]):
        x0, x1 = (m[n, 0] - k[2]) / k[0], (m[n, 1] - k[3]) / k[1]
        y0, y1 = (m[n, 2] - k[2]) / k[0], (m[n, 3] - k[3]) / k[1]
        ex0 = e[0, 0] * x0 + e[0, 1] * x1 + e[0, 2]
        ex1 = e[1, 0] * x0 + e[1, 1] * x1 + e[1, 2]
        ex2 = e[2, 0] * x0 + e[2, 1] * x1 + e[2, 2]
        ey0 = e[0, 0] * y0 + e[1, 0] * y1 + e[2, 0]
        ey1 = e[0, 1] * y0 + e[1, 1] * y1 + e[2, 1]
        num = abs(y0 * ex0 + y1 * ex1 + ex2)
        s += num / math.sqrt(ex0 * ex0 + ex1 * ex1 + 1e-12)
        s += num / math.sqrt(ey0 * ey0 + ey1 * ey1 + 1e-12)
    return s


@numba.njit(**_JIT)
def _reprojection(m, r, t, depth, k, penalty):
    s = 0.0
    for n in range(m.shape[0]):
        d = _bilinear(depth, m[n, 0], m[n, 1])
        x0 = d * (m[n, 0] - k[2]) / k[0]
        x1 = d * (m[n, 1] - k[3]) / k[1]
        y0 = r[0, 0] * x0 + r[0, 1] * x1 + r[0, 2] * d + t[0]
        y1 = r[1, 0] * x0 + r[1, 1] * x1 + r[1, 2] * d + t[1]
        y2 = r[2, 0] * x0 + r[2, 1] * x1 + r[2, 2] * d + t[2]
        if y2 <= MIN_Z:
            s += penalty
            continue
        du = k[0] * y0 / y2 + k[2] - m[n, 2]
        dv = k[1] * y1 / y2 + k[3] - m[n, 3]
        s += math.sqrt(du * du + dv * dv)
    return s


def edge_weights(img):
    """``exp(-mean_c |dI|)`` along x ``(H, W-1)`` and y ``(H-1, W)``."""
    img = np.asarray(img, dtype=np.float64)
    wx = np.exp(-np.abs(np.diff(img, axis=-1)).mean(0))
    wy = np.exp(-np.abs(np.diff(img, axis=-2)).mean(0))
    return np.ascontiguousarray(wx), np.ascontiguousarray(wy)


@numba.njit(**_JIT)
def _smoothness(depth, wx, wy):
    h, w = depth.shape
    s = sc = 0.0
    for i in range(h):
        for j in range(w):
            if j + 1 < w:
                s, sc = _kadd(s, sc, abs(depth[i, j + 1] - depth[i, j]) * wx[i, j])
            if i + 1 < h:
                s, sc = _kadd(s, sc, abs(depth[i + 1, j] - depth[i, j]) * wy[i, j])
    return s + sc


@numba.njit(**_JIT)
def _terms(images, depths, params, m1, m3, k, alpha, c1, c2, penalty, wx, wy, out, full=True):
    """Fill ``out`` with the seven terms.

    ``full=False`` evaluates only the depth-consistency and multi-view
    terms, the only ones that read the source depth maps; the others are
    left at zero.
    """
    nc = images.shape[1]
    h, w = depths.shape[1], depths.shape[2]
    d2n = depths[1] / _kmean(depths[1])
    valid = np.empty((h, w), dtype=np.bool_)
    syn_img = np.empty((nc, h, w))
    syn_depth = np.empty((h, w))
    for q in range(7):
        out[q] = 0.0
    scales = np.zeros(2)
    rots = np.empty((2, 3, 3))
    trans = np.empty((2, 3))
    for slot in range(2):
        src = 0 if slot == 0 else 2
        r = _rodrigues(params[slot, 0], params[slot, 1], params[slot, 2])
        t = params[slot, 3:].copy()
        rots[slot] = r
        trans[slot] = t
        count = _warp_sample(d2n, images[src], depths[src], r, t, k, valid, syn_img, syn_depth)
        if full:
            pix, ss = _photometric(images[1], syn_img, valid, count, c1, c2)
            out[0] += pix
            out[1] += ss
        num = numc = den = denc = 0.0
        for i in range(h):
            for j in range(w):
                if valid[i, j]:
                    num, numc = _kadd(num, numc, d2n[i, j])
                    den, denc = _kadd(den, denc, syn_depth[i, j])
        num += numc
        den += denc
        s = num / den if den > 0 else 0.0
        scales[slot] = s
        if count > 0:
            acc = accc = 0.0
            for i in range(h):
                for j in range(w):
                    if valid[i, j]:
                        acc, accc = _kadd(acc, accc, abs(s * syn_depth[i, j] - d2n[i, j]))
            out[5] += (acc + accc) / count
        mm = m1 if slot == 0 else m3
        if full and mm.shape[0] > 0:
            out[3] += _epipolar(mm, r, t, k)
            out[4] += _reprojection(mm, r, t, d2n, k, penalty)
    if full:
        out[2] = _smoothness(d2n, wx, wy)

    # chained pose 1 -> 3 = T23 . T21^-1 and its inverse
    r21t = rots[0].T
    r13 = rots[1] @ r21t
    t13 = trans[1] - r13 @ trans[0]
    r31 = r13.T
    t31 = -(r31 @ t13)
    d1n = scales[0] * depths[0]
    d3n = scales[1] * depths[2]
    multi = 0.0
    for direction in range(2):
        if direction == 0:
            ia, ib, da, db, r, t = images[0], images[2], d1n, d3n, r13, t13
        else:
            ia, ib, da, db, r, t = images[2], images[0], d3n, d1n, r31, t31
        count = _warp_sample(da, ib, db, r, t, k, valid, syn_img, syn_depth)
        pix, ss = _photometric(ia, syn_img, valid, count, c1, c2)
        dep = depc = 0.0
        if count > 0:
            for i in range(h):
                for j in range(w):
                    if valid[i, j]:
                        dep, depc = _kadd(dep, depc, abs(da[i, j] - syn_depth[i, j]))
            dep = (dep + depc) / count
        multi += alpha * pix + (1.0 - alpha) * ss + dep
    out[6] = 0.5 * multi


@numba.njit(**_JIT)
def _fd_depths(images, depths, params, m1, m3, k, alpha, c1, c2, penalty, wx, wy, h, plus, minus):
    """Term values with every depth pixel moved by +h and -h.

    Source-frame pixels only reach the depth and multi-view terms, so the
    remaining terms keep their base values there.
    """
    nf, hh, ww = depths.shape
    x = depths.copy()
    base = np.empty(7)
    _terms(images, x, params, m1, m3, k, alpha, c1, c2, penalty, wx, wy, base)
    buf = np.empty(7)
    for f in range(nf):
        full = f == 1
        for i in range(hh):
            for j in range(ww):
                orig = x[f, i, j]
                for sign in (1.0, -1.0):
                    x[f, i, j] = orig + sign * h
                    _terms(images, x, params, m1, m3, k, alpha, c1, c2, penalty, wx, wy, buf, full)
                    if not full:
                        buf[:5] = base[:5]
                    if sign > 0:
                        plus[:, f, i, j] = buf
                    else:
                        minus[:, f, i, j] = buf
                x[f, i, j] = orig


@numba.njit(**_JIT)
def _fd_params(images, depths, params, m1, m3, k, alpha, c1, c2, penalty, wx, wy, steps, plus, minus):
    x = params.copy()
    buf = np.empty(7)
    for s in range(2):
        for c in range(6):
            orig = x[s, c]
            x[s, c] = orig + steps[s, c]
            _terms(images, depths, x, m1, m3, k, alpha, c1, c2, penalty, wx, wy, buf)
            plus[:, s, c] = buf
            x[s, c] = orig - steps[s, c]
            _terms(images, depths, x, m1, m3, k, alpha, c1, c2, penalty, wx, wy, buf)
            minus[:, s, c] = buf
            x[s, c] = orig


def _args(inp, alpha, ssim_cfg, penalty):
    k = inp.intrinsics
    return (
        np.ascontiguousarray(inp.images, dtype=np.float64),
        np.array(inp.depths, dtype=np.float64, order="C"),
        np.array(inp.pose_params, dtype=np.float64, order="C"),
        np.ascontiguousarray(inp.matches[0].pairs),
        np.ascontiguousarray(inp.matches[1].pairs),
        np.array([k.fx, k.fy, k.cx, k.cy]),
        float(alpha), float(ssim_cfg.c1), float(ssim_cfg.c2), float(penalty),
        *edge_weights(inp.images[1]),
    )


def _defaults(alpha, ssim_cfg, penalty):
    from .photometric import SsimConfig
    from .sparse import BEHIND_PENALTY
    return (0.15 if alpha is None else alpha,
            SsimConfig() if ssim_cfg is None else ssim_cfg,
            BEHIND_PENALTY if penalty is None else penalty)


def reference_terms(inp, alpha=None, ssim_cfg=None, penalty=None):
    """All seven term values of a snippet, as a ``{name: value}`` dict."""
    alpha, ssim_cfg, penalty = _defaults(alpha, ssim_cfg, penalty)
    if ssim_cfg.patch != 3:
        raise ValueError("the reference evaluator implements 3x3 patches only")
    out = np.empty(7)
    _terms(*_args(inp, alpha, ssim_cfg, penalty), out)
    return dict(zip(TERMS, out.tolist()))


def _steps(inp, depth_step, pose_step):
    h = 1e-5 * float(inp.depths.mean()) if depth_step is None else float(depth_step)
    return h, pose_step * np.maximum(np.abs(inp.pose_params), 1e-2)


def finite_difference_gradients(inp, depth_step=None, pose_step=1e-6, alpha=None, ssim_cfg=None, penalty=None):
    """Finite-difference slopes of every term w.r.t. all depths and pose params.

    Returns ``(depth_fd, pose_fd)``, two :class:`~depthmotion.objective.FiniteDifferences`
    whose arrays are shaped ``(7, 3, H, W)`` and ``(7, 2, 6)`` with the
    term axis in ``TERMS`` order.  ``depth_step`` defaults to
    ``1e-5 * mean depth``; ``pose_step`` is relative, scaled by
    ``max(|param|, 1e-2)`` per coordinate.
    """
    from .objective import FiniteDifferences

    alpha, ssim_cfg, penalty = _defaults(alpha, ssim_cfg, penalty)
    args = _args(inp, alpha, ssim_cfg, penalty)
    base = np.empty(7)
    _terms(*args, base)
    h, steps = _steps(inp, depth_step, pose_step)

    dp = np.empty((7,) + inp.depths.shape)
    dm = np.empty_like(dp)
    _fd_depths(*args, h, dp, dm)
    pp = np.empty((7, 2, 6))
    pm = np.empty_like(pp)
    _fd_params(*args, steps, pp, pm)

    def pack(plus, minus, step):
        f0 = base.reshape((7,) + (1,) * (plus.ndim - 1))
        return FiniteDifferences((plus - minus) / (2 * step), (plus - f0) / step, (f0 - minus) / step)

    return pack(dp, dm, h), pack(pp, pm, steps[None])


def second_order_one_sided(inp, depth_fd, pose_fd, depth_coords=(), pose_coords=(),
                           depth_step=None, pose_step=1e-6, alpha=None, ssim_cfg=None, penalty=None):
    """Add ``(-3 f0 + 4 f(x+-h) - f(x+-2h)) / 2h`` quotients at the listed coordinates.

    Coordinates are index tuples into a depth stack ``(3, H, W)`` or the
    pose array ``(2, 6)``.  Returns updated copies of both
    :class:`~depthmotion.objective.FiniteDifferences`.
    """
    from dataclasses import replace

    alpha, ssim_cfg, penalty = _defaults(alpha, ssim_cfg, penalty)
    args = list(_args(inp, alpha, ssim_cfg, penalty))
    h, steps = _steps(inp, depth_step, pose_step)
    f0 = np.empty(7)
    _terms(*args, f0)
    buf = np.empty(7)

    def quotients(slot, idx, step):
        x = args[slot]
        orig = x[idx]
        vals = {}
        for m in (-2, -1, 1, 2):
            x[idx] = orig + m * step
            _terms(*args, buf)
            vals[m] = buf.copy()
        x[idx] = orig
        return ((-3 * f0 + 4 * vals[1] - vals[2]) / (2 * step),
                (3 * f0 - 4 * vals[-1] + vals[-2]) / (2 * step))

    out = []
    for fd, slot, coords, step_of in ((depth_fd, 1, depth_coords, lambda idx: h),
                                      (pose_fd, 2, pose_coords, lambda idx: steps[idx])):
        fw2 = np.full(fd.central.shape, np.nan) if fd.forward2 is None else fd.forward2.copy()
        bw2 = np.full(fd.central.shape, np.nan) if fd.backward2 is None else fd.backward2.copy()
        for idx in coords:
            idx = tuple(int(i) for i in idx)
            fw2[(slice(None),) + idx], bw2[(slice(None),) + idx] = quotients(slot, idx, step_of(idx))
        out.append(replace(fd, forward2=fw2, backward2=bw2))
    return tuple(out)
