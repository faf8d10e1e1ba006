"""Dense photometric losses: masked L1, 3x3 SSIM and edge-aware smoothness.

Every loss returns a 0-dim (or batch-shaped) torch tensor that is
differentiable w.r.t. whatever leaves produced its inputs.  Use
:func:`differentiate` to turn one into a :class:`LossValue` holding
numpy gradients.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .errors import EmptyMask
from .geometry import as_tensor
from .warping import SampleResult


@dataclass(frozen=True)
class SsimConfig:
    c1: float = 0.01 ** 2
    c2: float = 0.03 ** 2
    patch: int = 3

    def __post_init__(self):
        if not (self.c1 > 0 and self.c2 > 0):
            raise ValueError("c1 and c2 must be positive")
        if self.patch < 3 or self.patch % 2 == 0:
            raise ValueError("patch must be odd and >= 3")


@dataclass
class LossValue:
    value: float
    grad_depth: np.ndarray | None = None
    grad_pose: np.ndarray | None = None


def differentiate(loss, depth=None, poses=()):
    """Evaluate ``loss`` and its gradients w.r.t. the given leaf tensors.

    ``poses`` is a sequence of ``(6,)`` parameter leaves; the result
    stacks their gradients into ``grad_pose`` of shape ``(len(poses), 6)``.
    Leaves the loss does not depend on get zero gradients.
    """
    leaves = ([depth] if depth is not None else []) + list(poses)
    grads = torch.autograd.grad(loss, leaves, allow_unused=True) if leaves else []
    grads = [torch.zeros_like(x) if g is None else g for x, g in zip(leaves, grads)]
    gd = grads[0].detach().numpy() if depth is not None else None
    gp = None
    if poses:
        gp = np.stack([g.detach().numpy() for g in grads[1 if depth is not None else 0:]])
    return LossValue(float(loss.detach()), gd, gp)


def _values(x):
    if isinstance(x, SampleResult):
        return x.values
    x = as_tensor(x)
    return x[None] if x.dim() == 2 else x


def _mask(mask):
    m = as_tensor(mask)
    return m


def pixel_loss(target, synthesized, mask, check=True):
    """Mean absolute difference over the masked pixels and all channels."""
    tgt = _values(target)
    syn = _values(synthesized)
    m = _mask(mask)
    count = m.sum(dim=(-2, -1))
    if check and bool((count == 0).any()):
        raise EmptyMask("pixel loss needs at least one valid pixel")
    channels = syn.shape[-3]
    err = ((syn - tgt).abs() * m[..., None, :, :]).sum(dim=(-3, -2, -1))
    return err / (channels * count.clamp(min=1))


def _box(x, k):
    shape = x.shape
    out = F.avg_pool2d(x.reshape(-1, 1, *shape[-2:]), k, stride=1)
    return out.reshape(*shape[:-2], *out.shape[-2:])


def ssim_map(x, y, cfg=SsimConfig()):
    """Per-patch SSIM index over valid-region ``patch x patch`` windows."""
    k = cfg.patch
    mx, my = _box(x, k), _box(y, k)
    sxx = _box(x * x, k) - mx * mx
    syy = _box(y * y, k) - my * my
    sxy = _box(x * y, k) - mx * my
    num = (2 * mx * my + cfg.c1) * (2 * sxy + cfg.c2)
    den = (mx * mx + my * my + cfg.c1) * (sxx + syy + cfg.c2)
    return num / den


def patch_mask(mask, patch=3):
    """1 where the whole window around a pixel lies inside ``mask``."""
    m = as_tensor(mask)
    return (_box(m, patch) > 1 - 1e-9).to(m.dtype)


def ssim_loss(target, synthesized, mask, cfg=SsimConfig(), check=True):
    tgt = _values(target)
    syn = _values(synthesized)
    pm = patch_mask(mask, cfg.patch)
    count = pm.sum(dim=(-2, -1))
    if check and bool((count == 0).any()):
        raise EmptyMask("no SSIM patch lies fully inside the mask")
    s = ssim_map(syn, tgt, cfg)
    channels = s.shape[-3]
    mean = (s * pm[..., None, :, :]).sum(dim=(-3, -2, -1)) / (channels * count.clamp(min=1))
    return 0.5 * (1 - mean)


def forward_diff(x):
    """Forward differences along x and y; the last column/row is zero."""
    dx = F.pad(x[..., :, 1:] - x[..., :, :-1], (0, 1))
    dy = F.pad(x[..., 1:, :] - x[..., :-1, :], (0, 0, 0, 1))
    return dx, dy


def smoothness_loss(depth, target_img):
    d = as_tensor(depth)
    img = _values(target_img)
    ddx, ddy = forward_diff(d)
    idx, idy = forward_diff(img)
    wx = torch.exp(-idx.abs().mean(-3))
    wy = torch.exp(-idy.abs().mean(-3))
    return (ddx.abs() * wx + ddy.abs() * wy).sum(dim=(-2, -1))


def baseline_loss(target, synthesized, mask, depth, alpha=0.15, beta=0.1, cfg=SsimConfig(), check=True):
    if not 0 <= alpha <= 1:
        raise ValueError("alpha must lie in [0, 1]")
    if beta < 0:
        raise ValueError("beta must be non-negative")
    return (alpha * pixel_loss(target, synthesized, mask, check)
            + (1 - alpha) * ssim_loss(target, synthesized, mask, cfg, check)
            + beta * smoothness_loss(depth, target))
