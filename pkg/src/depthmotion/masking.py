"""Percentile masks that pick the pixels worth supervising.

Thresholds use the nearest-rank percentile of the valid pixels and are
recomputed on every call.  The masks are plain booleans: they act as
stop-gradient weights downstream.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .errors import EmptyMask
from .geometry import as_tensor
from .photometric import forward_diff


@dataclass(frozen=True)
class MaskConfig:
    error_percentile: float = 90.0
    gradient_percentile: float = 90.0

    def __post_init__(self):
        for p in (self.error_percentile, self.gradient_percentile):
            if not 0 < p < 100:
                raise ValueError(f"percentile must lie in (0, 100), got {p}")


def nearest_rank_threshold(values, valid, percentile):
    """Value at rank ``ceil(P/100 * n)`` among the valid entries (per batch)."""
    x = as_tensor(values).detach()
    m = as_tensor(valid).bool()
    flat = torch.where(m, x, torch.full_like(x, math.inf)).flatten(-2)
    n = m.flatten(-2).sum(-1)
    srt, _ = torch.sort(flat, dim=-1)
    rank = torch.ceil(n.to(x.dtype) * percentile / 100.0 - 1e-9).long().clamp(min=1)
    return torch.gather(srt, -1, (rank - 1)[..., None])[..., 0]


def _check(valid):
    m = as_tensor(valid).bool()
    if bool((m.flatten(-2).sum(-1) == 0).any()):
        raise EmptyMask("percentile mask needs at least one valid pixel")
    return m


def error_mask(error_map, valid, cfg=MaskConfig()):
    """Keep valid pixels whose error is at or below the percentile."""
    m = _check(valid)
    err = as_tensor(error_map).detach()
    thr = nearest_rank_threshold(err, m, cfg.error_percentile)
    return m & (err <= thr[..., None, None])


def image_gradient_magnitude(img):
    x = as_tensor(img)
    if x.dim() == 2:
        x = x[None]
    dx, dy = forward_diff(x)
    return torch.sqrt(dx * dx + dy * dy).mean(-3)


def gradient_mask(target_img, valid, cfg=MaskConfig()):
    """Keep valid pixels whose image gradient is strictly above the percentile."""
    m = _check(valid)
    g = image_gradient_magnitude(as_tensor(target_img).detach())
    thr = nearest_rank_threshold(g, m, cfg.gradient_percentile)
    return m & (g > thr[..., None, None])


def composite_mask(error_m, gradient_m):
    a, b = as_tensor(error_m), as_tensor(gradient_m)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    return a.bool() & b.bool()
