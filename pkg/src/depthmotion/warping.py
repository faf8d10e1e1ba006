"""Inverse warping of a source view into the target frame.

All functions take torch tensors (numpy arrays are converted) with
arbitrary leading batch dimensions; the last two dimensions are
``(H, W)``.  Gradients flow from the sampled values back to the target
depth and to the pose through the warped coordinates.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import NonPositiveDepth
from .geometry import as_tensor, pose_to_rt

MIN_Z = 1e-9
BOUND_SLACK = 1e-9                 # pixels; absorbs round-off at the image border


@dataclass
class WarpField:
    """Source-image coordinates of every target pixel plus the validity mask M."""

    u: torch.Tensor
    v: torch.Tensor
    z: torch.Tensor
    valid: torch.Tensor

    @property
    def count(self):
        return self.valid.sum(dim=(-2, -1))


@dataclass
class SampleResult:
    values: torch.Tensor
    valid: torch.Tensor
    du: torch.Tensor
    dv: torch.Tensor

    @property
    def jacobian_wrt_coords(self):
        return torch.stack([self.du, self.dv], -1)


def pixel_grid(h, w, dtype=torch.float64):
    v, u = torch.meshgrid(torch.arange(h, dtype=dtype), torch.arange(w, dtype=dtype), indexing="ij")
    return u, v


def compute_warp(depth_t, pose_t_to_s, k_t, k_s=None, check=True):
    """Source pixel ``p_s ~ K_s (R D(p) K_t^-1 p + t)`` for every target pixel ``p``.

    Pixels that land behind the source camera or outside
    ``[0, W-1] x [0, H-1]`` are flagged invalid rather than clamped.
    """
    depth = as_tensor(depth_t)
    if check and bool((depth <= 0).any()):
        raise NonPositiveDepth("target depth must be strictly positive")
    k_s = k_t if k_s is None else k_s
    r, t = pose_to_rt(pose_t_to_s)
    h, w = depth.shape[-2:]
    u, v = pixel_grid(h, w)
    xn = (u - k_t.cx) / k_t.fx
    yn = (v - k_t.cy) / k_t.fy

    def row(i):
        ri = r[..., i, :]
        return depth * (ri[..., 0, None, None] * xn + ri[..., 1, None, None] * yn
                        + ri[..., 2, None, None]) + t[..., i, None, None]

    x, y, z = row(0), row(1), row(2)
    front = z > MIN_Z
    zs = torch.where(front, z, torch.ones_like(z))
    us = k_s.fx * x / zs + k_s.cx
    vs = k_s.fy * y / zs + k_s.cy
    lo, hu, hv = -BOUND_SLACK, w - 1 + BOUND_SLACK, h - 1 + BOUND_SLACK
    valid = front & (us >= lo) & (us <= hu) & (vs >= lo) & (vs <= hv)
    return WarpField(us, vs, z, valid)


def sample(source, u, v, valid=None):
    """Bilinear lookup of ``source[..., Hs, Ws]`` at real coordinates ``u, v``.

    Batch dimensions of ``source`` and of the coordinates broadcast.
    Returns ``(values, du, dv)``; ``du, dv`` are the exact derivatives of
    the interpolant (piecewise constant inside a lattice cell).
    """
    src = as_tensor(source)
    hs, ws = src.shape[-2:]
    uc = u.clamp(0, ws - 1)
    vc = v.clamp(0, hs - 1)
    u0f = torch.floor(uc).detach()
    v0f = torch.floor(vc).detach()
    fu = uc - u0f
    fv = vc - v0f
    u0 = u0f.long()
    v0 = v0f.long()
    u1 = (u0 + 1).clamp(max=ws - 1)
    v1 = (v0 + 1).clamp(max=hs - 1)

    out_hw = u.shape[-2:]
    batch = torch.broadcast_shapes(src.shape[:-2], u.shape[:-2])
    flat = src.reshape(*src.shape[:-2], hs * ws).expand(*batch, hs * ws)

    def at(vi, ui):
        idx = (vi * ws + ui).reshape(*ui.shape[:-2], -1).expand(*batch, out_hw[0] * out_hw[1])
        return torch.gather(flat, -1, idx).reshape(*batch, *out_hw)

    i00, i01, i10, i11 = at(v0, u0), at(v0, u1), at(v1, u0), at(v1, u1)
    values = (1 - fv) * ((1 - fu) * i00 + fu * i01) + fv * ((1 - fu) * i10 + fu * i11)
    du = (1 - fv) * (i01 - i00) + fv * (i11 - i10)
    dv = (1 - fu) * (i10 - i00) + fu * (i11 - i01)
    if valid is not None:
        m = valid.to(values.dtype)
        values, du, dv = values * m, du * m, dv * m
    return values, du.detach(), dv.detach()


def bilinear_sample(source, warp):
    """Sample one grid (or a ``(C, H, W)`` stack) through a warp field."""
    src = as_tensor(source)
    u, v, valid = warp.u, warp.v, warp.valid
    if src.dim() == 3 and u.dim() == 2:
        u, v, valid = u[None], v[None], valid[None]
    values, du, dv = sample(src, u, v, valid)
    return SampleResult(values, valid.expand(values.shape), du, dv)


def synthesize_view(source_img, depth_t, pose, k_t, k_s=None):
    """Warp a ``(C, H, W)`` source image into the target frame.

    Returns the per-channel sample result and the warp field.
    """
    warp = compute_warp(depth_t, pose, k_t, k_s)
    src = as_tensor(source_img)
    if src.dim() == 2:
        src = src[None]
    values, du, dv = sample(src, warp.u[..., None, :, :], warp.v[..., None, :, :],
                            warp.valid[..., None, :, :])
    valid = warp.valid[..., None, :, :].expand(values.shape)
    return SampleResult(values, valid, du, dv), warp
