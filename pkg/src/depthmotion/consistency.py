"""Scale-aligned depth consistency between views.

``depth_consistency_loss`` compares the target depth with a source depth
map warped into the target frame after mean alignment; ``multiview_loss``
closes the triplet by warping frame 1 into frame 3 with the chained pose.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import torch

from .errors import EmptyMask, NonPositiveDepth, ZeroSynthMean
from .geometry import as_tensor, compose_rt, invert_rt, pose_to_rt
from .photometric import SsimConfig, pixel_loss, ssim_loss
from .warping import SampleResult, compute_warp, sample


@dataclass
class NormalizedDepth:
    depth: torch.Tensor
    applied_scale: torch.Tensor


def mean_normalize(depth):
    d = as_tensor(depth)
    if bool((d <= 0).any()):
        raise NonPositiveDepth("mean normalization needs a positive depth map")
    scale = 1.0 / d.mean(dim=(-2, -1))
    return NormalizedDepth(d * scale[..., None, None], scale)


def _synth_values(x):
    return x.values if isinstance(x, SampleResult) else as_tensor(x)


def aligned_scale_ratio(target_depth, synth_depth, mask, check=True):
    """``mean(D_t * M) / mean(D~ * M)``; differentiable in both maps."""
    dt = as_tensor(target_depth)
    ds = _synth_values(synth_depth)
    m = as_tensor(mask).to(dt.dtype)
    count = m.sum(dim=(-2, -1))
    if check and bool((count == 0).any()):
        raise EmptyMask("scale alignment needs at least one valid pixel")
    num = (dt * m).sum(dim=(-2, -1))
    den = (ds * m).sum(dim=(-2, -1))
    if check and bool((den <= 0).any()):
        raise ZeroSynthMean("synthesized depth has no positive mass under the mask")
    ok = den > 0
    return num / torch.where(ok, den, torch.ones_like(den))


def depth_consistency_loss(target_depth, synth_depth, mask, check=True):
    dt = as_tensor(target_depth)
    ds = _synth_values(synth_depth)
    m = as_tensor(mask).to(dt.dtype)
    s = aligned_scale_ratio(dt, ds, m, check)
    count = m.sum(dim=(-2, -1))
    diff = ((s[..., None, None] * ds - dt).abs() * m).sum(dim=(-2, -1))
    return diff / count.clamp(min=1)


def chained_pose(pose_2to1, pose_2to3):
    """Points of frame 1 into frame 3: ``T_2->3 . T_2->1^-1``."""
    return compose_rt(pose_to_rt(pose_2to3), invert_rt(*pose_to_rt(pose_2to1)))


class MultiViewResult(NamedTuple):
    loss: torch.Tensor
    empty: bool


def _direction(img_a, img_b, depth_a, depth_b, pose_ab, k, alpha, cfg):
    warp = compute_warp(depth_a, pose_ab, k, check=False)
    m = warp.valid
    syn_img, _, _ = sample(img_b, warp.u[..., None, :, :], warp.v[..., None, :, :], m[..., None, :, :])
    syn_depth, _, _ = sample(depth_b, warp.u, warp.v, m)
    mf = m.to(depth_a.dtype)
    count = mf.sum(dim=(-2, -1))
    depth_term = ((depth_a - syn_depth).abs() * mf).sum(dim=(-2, -1)) / count.clamp(min=1)
    loss = (alpha * pixel_loss(img_a, syn_img, mf, check=False)
            + (1 - alpha) * ssim_loss(img_a, syn_img, mf, cfg, check=False)
            + depth_term)
    return loss, count


def multiview_loss(frames, depths, pose_2to1, pose_2to3, k, alpha=0.15, cfg=SsimConfig()):
    """Triplet consistency through the chained pose, averaged over 1->3 and 3->1.

    ``frames`` is ``(..., 3, C, H, W)``, ``depths`` ``(..., 3, H, W)`` with
    frame index 1 the target.  Source depths are brought to the target's
    scale with the same ratio as the forward-backward term.  An empty
    chained mask yields zero loss and ``empty=True``.
    """
    imgs = as_tensor(frames)
    d = as_tensor(depths)
    i1, i2, i3 = imgs[..., 0, :, :, :], imgs[..., 1, :, :, :], imgs[..., 2, :, :, :]
    d1, d2, d3 = d[..., 0, :, :], d[..., 1, :, :], d[..., 2, :, :]
    rt21, rt23 = pose_to_rt(pose_2to1), pose_to_rt(pose_2to3)

    def source_scale(ds, rt):
        warp = compute_warp(d2, rt, k, check=False)
        synth, _, _ = sample(ds, warp.u, warp.v, warp.valid)
        return aligned_scale_ratio(d2, synth, warp.valid, check=False)

    d1n = source_scale(d1, rt21)[..., None, None] * d1
    d3n = source_scale(d3, rt23)[..., None, None] * d3
    rt13 = chained_pose(rt21, rt23)
    rt31 = invert_rt(*rt13)
    l13, c13 = _direction(i1, i3, d1n, d3n, rt13, k, alpha, cfg)
    l31, c31 = _direction(i3, i1, d3n, d1n, rt31, k, alpha, cfg)
    empty = bool((c13 == 0).any() or (c31 == 0).any())
    return MultiViewResult(0.5 * (l13 + l31), empty)
