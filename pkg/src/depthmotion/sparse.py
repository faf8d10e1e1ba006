"""Sparse two-view terms over precomputed feature matches."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import DegenerateTranslation, EmptyMatchSet
from .geometry import as_tensor, pose_to_rt, skew, skew_t
from .warping import MIN_Z, sample

BEHIND_PENALTY = 100.0


@dataclass(frozen=True, eq=False)
class MatchSet:
    """Correspondences ``p <-> p'`` in pixels; ``p`` lives in the target view."""

    pairs: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.pairs, dtype=np.float64).reshape(-1, 4)
        object.__setattr__(self, "pairs", a)

    def __len__(self):
        return len(self.pairs)

    @property
    def p(self):
        return self.pairs[:, :2]

    @property
    def p_prime(self):
        return self.pairs[:, 2:]

    def swapped(self):
        return MatchSet(self.pairs[:, [2, 3, 0, 1]])


def _pairs(matches):
    a = matches.pairs if isinstance(matches, MatchSet) else np.asarray(matches, dtype=np.float64)
    return a.reshape(-1, 4)


def essential_from_pose(pose):
    t = pose.translation
    if np.linalg.norm(t) <= 1e-12:
        raise DegenerateTranslation("pure rotation has no essential matrix")
    return skew(t) @ pose.rotation


def _calibrated(pts, k):
    x = (pts[:, 0] - k.cx) / k.fx
    y = (pts[:, 1] - k.cy) / k.fy
    return torch.stack([x, y, torch.ones_like(x)], -1)


def epipolar_loss(matches, pose, k_t, k_s=None, signed=False, check=True, eps=1e-12):
    """Symmetric epipolar distance summed over matches (calibrated units).

    The first term is the distance of ``x'`` to the line ``E x`` in the
    source image, the second the distance of ``x`` to ``E^T x'`` in the
    target image.  Depth does not enter.
    """
    a = _pairs(matches)
    if len(a) == 0:
        raise EmptyMatchSet("epipolar loss needs at least one match")
    k_s = k_t if k_s is None else k_s
    r, t = pose_to_rt(pose)
    if check and bool((t.detach().norm(dim=-1) <= 1e-12).any()):
        raise DegenerateTranslation("pure rotation has no essential matrix")
    a = as_tensor(a)
    x = _calibrated(a[:, :2], k_t)
    xp = _calibrated(a[:, 2:], k_s)
    e = skew_t(t) @ r                                  # (..., 3, 3)
    ex = torch.einsum("...ij,nj->...ni", e, x)          # lines in the source image
    etxp = torch.einsum("...ji,nj->...ni", e, xp)       # lines in the target image
    num = (xp * ex).sum(-1)
    d1 = num / torch.sqrt(ex[..., 0] ** 2 + ex[..., 1] ** 2 + eps)
    d2 = num / torch.sqrt(etxp[..., 0] ** 2 + etxp[..., 1] ** 2 + eps)
    if not signed:
        d1, d2 = d1.abs(), d2.abs()
    return (d1 + d2).sum(-1)


def _safe_norm(r):
    r2 = (r * r).sum(-1)
    pos = r2 > 0
    n = torch.sqrt(torch.where(pos, r2, torch.ones_like(r2)))
    return torch.where(pos, n, torch.zeros_like(n))


def reprojection_residuals(matches, pose, depth_t, k_t, k_s=None, penalty=BEHIND_PENALTY):
    """Per-match pixel distance between ``p'`` and the reprojected track.

    Matches whose transformed point is behind the source camera get the
    constant ``penalty`` with no gradient.
    """
    a = as_tensor(_pairs(matches))
    if len(a) == 0:
        raise EmptyMatchSet("reprojection loss needs at least one match")
    k_s = k_t if k_s is None else k_s
    r, t = pose_to_rt(pose)
    depth = as_tensor(depth_t)
    pu, pv = a[:, 0], a[:, 1]
    # sample expects trailing (H, W); carry the matches as a 1 x N grid
    d, _, _ = sample(depth, pu[None, :], pv[None, :])
    d = d[..., 0, :]
    x = _calibrated(a[:, :2], k_t) * d[..., None]
    y = torch.einsum("...ij,...nj->...ni", r, x) + t[..., None, :]
    z = y[..., 2]
    front = z > MIN_Z
    zs = torch.where(front, z, torch.ones_like(z))
    proj = torch.stack([k_s.fx * y[..., 0] / zs + k_s.cx, k_s.fy * y[..., 1] / zs + k_s.cy], -1)
    res = _safe_norm(proj - a[:, 2:])
    return torch.where(front, res, torch.full_like(res, penalty))


def reprojection_loss(matches, pose, depth_t, k_t, k_s=None, penalty=BEHIND_PENALTY):
    return reprojection_residuals(matches, pose, depth_t, k_t, k_s, penalty).sum(-1)

