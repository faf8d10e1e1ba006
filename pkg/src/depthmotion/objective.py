"""The full training objective on a three-frame snippet, plus gradient tools."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .consistency import depth_consistency_loss, multiview_loss
from .errors import DivergenceDetected, NonFiniteEvaluation
from .geometry import Intrinsics, as_tensor, params_to_rt
from .masking import MaskConfig, composite_mask, gradient_mask, error_mask
from .photometric import SsimConfig, pixel_loss, smoothness_loss, ssim_loss
from .sparse import MatchSet, epipolar_loss, reprojection_loss
from .warping import compute_warp, sample

TERMS = ("pixel", "ssim", "smooth", "epi", "reproj", "depth", "multi")

# source frame index and pose slot for the two pairwise directions
_PAIRS = ((0, 0), (2, 1))


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.15
    beta: float = 0.1
    gamma1: float = 0.001
    gamma2: float = 0.001
    mu1: float = 0.1
    mu2: float = 0.1

    def __post_init__(self):
        for name, v in self.as_dict().items():
            if v < 0:
                raise ValueError(f"weight {name} must be non-negative")
        if self.alpha > 1:
            raise ValueError("alpha must not exceed 1")

    def as_dict(self):
        return {k: getattr(self, k) for k in ("alpha", "beta", "gamma1", "gamma2", "mu1", "mu2")}

    def term_weights(self):
        """Multiplier of every term in the total, in ``TERMS`` order."""
        return {
            "pixel": self.alpha, "ssim": 1 - self.alpha, "smooth": self.beta,
            "epi": self.gamma1, "reproj": self.gamma2, "depth": self.mu1, "multi": self.mu2,
        }

    @classmethod
    def only(cls, **kw):
        """All weights zero except the ones given (alpha defaults to 0 too)."""
        base = dict(alpha=0.0, beta=0.0, gamma1=0.0, gamma2=0.0, mu1=0.0, mu2=0.0)
        base.update(kw)
        return cls(**base)


@dataclass
class SnippetInput:
    """Frames ``(I1, I2, I3)`` with ``I2`` the target.

    ``pose_params`` rows are ``T_2->1`` and ``T_2->3`` (axis-angle then
    translation); ``matches`` hold ``2<->1`` and ``2<->3`` with ``p`` in
    frame 2.
    """

    images: np.ndarray
    depths: np.ndarray
    pose_params: np.ndarray
    matches: tuple
    intrinsics: Intrinsics
    refine: bool = False
    mask_config: MaskConfig = field(default_factory=MaskConfig)

    def __post_init__(self):
        imgs = np.asarray(self.images, dtype=np.float64)
        if imgs.ndim == 3:
            imgs = imgs[:, None]
        self.images = imgs
        self.depths = np.asarray(self.depths, dtype=np.float64)
        self.pose_params = np.asarray(self.pose_params, dtype=np.float64).reshape(2, 6)
        self.matches = tuple(m if isinstance(m, MatchSet) else MatchSet(m) for m in self.matches)
        if imgs.shape[0] != 3 or self.depths.shape[0] != 3:
            raise ValueError("a snippet holds exactly three frames")
        if imgs.shape[-2:] != self.depths.shape[-2:]:
            raise ValueError("image and depth sizes differ")
        if len(self.matches) != 2:
            raise ValueError("need match sets for 2<->1 and 2<->3")
        if (self.depths <= 0).any():
            raise ValueError("depths must be positive")

    def with_params(self, depths=None, pose_params=None):
        return replace(self,
                       depths=self.depths if depths is None else depths,
                       pose_params=self.pose_params if pose_params is None else pose_params)


@dataclass
class LossReport:
    terms: dict
    total: float
    grad_depths: np.ndarray | None = None
    grad_poses: np.ndarray | None = None
    flags: tuple = ()

    def row(self):
        return {**self.terms, "total": self.total}


def loss_terms(inp, depths, params, w=LossWeights(), ssim_cfg=SsimConfig()):
    """Per-term loss tensors; ``depths``/``params`` may carry a batch dimension.

    Pairwise terms are summed over the two source views.  Returns the
    term dict and a set of flags naming terms that degraded to zero.
    """
    k = inp.intrinsics
    imgs = as_tensor(inp.images)
    i2 = imgs[1]
    d2 = depths[..., 1, :, :]
    d2n = d2 / d2.mean(dim=(-2, -1), keepdim=True)
    zero = torch.zeros(depths.shape[:-3], dtype=depths.dtype)
    t = {name: zero for name in TERMS}
    flags = set()

    for src, slot in _PAIRS:
        rt = params_to_rt(params[..., slot, :])
        warp = compute_warp(d2n, rt, k, check=False)
        m = warp.valid
        mf = m.to(d2.dtype)
        if not bool(m.flatten(-2).any(-1).all()):
            flags.update(("pixel", "ssim", "depth"))
        syn, _, _ = sample(imgs[src], warp.u[..., None, :, :], warp.v[..., None, :, :], m[..., None, :, :])
        pm = mf
        if inp.refine and bool(m.flatten(-2).any(-1).all()):
            err = (syn - i2).abs().mean(-3).detach()
            pm = composite_mask(error_mask(err, m, inp.mask_config),
                                gradient_mask(i2, m, inp.mask_config)).to(d2.dtype)
            if not bool(pm.flatten(-2).any(-1).all()):
                flags.add("pixel")
        t["pixel"] = t["pixel"] + pixel_loss(i2, syn, pm, check=False)
        t["ssim"] = t["ssim"] + ssim_loss(i2, syn, mf, ssim_cfg, check=False)
        syn_d, _, _ = sample(depths[..., src, :, :], warp.u, warp.v, m)
        t["depth"] = t["depth"] + depth_consistency_loss(d2n, syn_d, mf, check=False)

        matches = inp.matches[slot]
        if len(matches):
            if bool((rt[1].detach().norm(dim=-1) <= 1e-12).any()):
                flags.add("epi")
            else:
                t["epi"] = t["epi"] + epipolar_loss(matches, rt, k, check=False)
            t["reproj"] = t["reproj"] + reprojection_loss(matches, rt, d2n, k)
        else:
            flags.update(("epi", "reproj"))

    t["smooth"] = smoothness_loss(d2n, i2)
    stacked = torch.stack([depths[..., 0, :, :], d2n, depths[..., 2, :, :]], -3)
    mv = multiview_loss(imgs, stacked, params[..., 0, :], params[..., 1, :], k, w.alpha, ssim_cfg)
    t["multi"] = mv.loss
    if mv.empty:
        flags.add("multi")
    return t, flags


def weighted_total(terms, w):
    tw = w.term_weights()
    total = 0.0
    for name in TERMS:
        total = total + tw[name] * terms[name]
    return total


def total_loss(inp, w=LossWeights(), ssim_cfg=SsimConfig(), grads=True):
    depths = torch.tensor(inp.depths, requires_grad=grads)
    params = torch.tensor(inp.pose_params, requires_grad=grads)
    terms, flags = loss_terms(inp, depths, params, w, ssim_cfg)
    total = weighted_total(terms, w)
    gd = gp = None
    if grads:
        gd, gp = torch.autograd.grad(total, (depths, params), allow_unused=True)
        gd = np.zeros_like(inp.depths) if gd is None else gd.numpy()
        gp = np.zeros_like(inp.pose_params) if gp is None else gp.numpy()
    values = {name: float(terms[name].detach()) for name in TERMS}
    return LossReport(values, float(total.detach()), gd, gp, tuple(sorted(flags)))


def total_loss_batch(inp, depths, params, w=LossWeights(), ssim_cfg=SsimConfig()):
    """Totals for a batch ``depths (B, 3, H, W)``, ``params (B, 2, 6)``; no gradients."""
    with torch.no_grad():
        terms, _ = loss_terms(inp, as_tensor(depths), as_tensor(params), w, ssim_cfg)
        return weighted_total(terms, w).numpy()


@dataclass
class FiniteDifferences:
    """Difference quotients of one function at one point.

    ``forward2``/``backward2`` optionally hold second-order one-sided
    quotients (``NaN`` where not computed); they replace the first-order
    ones wherever present.
    """

    central: np.ndarray
    forward: np.ndarray
    backward: np.ndarray
    forward2: np.ndarray | None = None
    backward2: np.ndarray | None = None

    def __getitem__(self, idx):
        pick = lambda a: None if a is None else a[idx]
        return FiniteDifferences(self.central[idx], self.forward[idx], self.backward[idx],
                                 pick(self.forward2), pick(self.backward2))

    def one_sided(self):
        fw, bw = self.forward, self.backward
        if self.forward2 is not None:
            fw = np.where(np.isfinite(self.forward2), self.forward2, fw)
        if self.backward2 is not None:
            bw = np.where(np.isfinite(self.backward2), self.backward2, bw)
        return fw, bw


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_index: int
    passed: bool
    numeric: np.ndarray
    analytic: np.ndarray
    kinked: np.ndarray = None
    errors: np.ndarray = None

    @property
    def kink_count(self):
        return 0 if self.kinked is None else int(self.kinked.sum())


def central_differences(f, x, h, vectorized=False, chunk=256):
    """Difference quotients of scalar ``f`` at ``x`` as :class:`FiniteDifferences`.

    ``h`` is a scalar or per-coordinate step.  With ``vectorized=True``,
    ``f`` maps a ``(B, n)`` batch of points to ``(B,)`` values.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    n = x.size
    steps = np.broadcast_to(np.asarray(h, dtype=np.float64), (n,))
    if np.any(steps <= 0):
        raise ValueError("finite-difference step must be positive")
    f0 = float(np.asarray(f(x[None]) if vectorized else f(x)).ravel()[0])
    if not np.isfinite(f0):
        raise NonFiniteEvaluation("non-finite loss at the evaluation point")
    fp, fm = np.empty(n), np.empty(n)
    if not vectorized:
        for i in range(n):
            xp, xm = x.copy(), x.copy()
            xp[i] += steps[i]
            xm[i] -= steps[i]
            fp[i], fm[i] = float(f(xp)), float(f(xm))
            if not (np.isfinite(fp[i]) and np.isfinite(fm[i])):
                raise NonFiniteEvaluation(f"non-finite loss when perturbing coordinate {i}")
    else:
        for lo in range(0, n, chunk):
            idx = np.arange(lo, min(lo + chunk, n))
            pts = np.repeat(x[None], 2 * len(idx), axis=0)
            r = np.arange(len(idx))
            pts[r, idx] += steps[idx]
            pts[len(idx) + r, idx] -= steps[idx]
            vals = np.asarray(f(pts), dtype=np.float64)
            if not np.all(np.isfinite(vals)):
                raise NonFiniteEvaluation(f"non-finite loss in coordinates {lo}..{idx[-1]}")
            fp[idx], fm[idx] = vals[: len(idx)], vals[len(idx):]
    return FiniteDifferences((fp - fm) / (2 * steps), (fp - f0) / steps, (f0 - fm) / steps)


def compare_gradients(analytic, fd, tol=1e-4, floor=1e-3, kink_rtol=None):
    """Per-coordinate relative error of ``analytic`` against difference quotients.

    The error is ``|a - n| / max(|a|, |n|, floor * max|n|)`` with ``n`` the
    central quotient.  Where the forward and backward quotients disagree by
    more than ``kink_rtol`` (relative, same floor; defaults to ``tol``) the stencil straddles a
    kink or a bilinear lattice line; there the central quotient is not a
    derivative at all, so ``a`` is scored against the one-sided quotient
    closest to it when that is closer than the central one.
    """
    ana = np.asarray(analytic, dtype=np.float64).ravel()
    c = np.asarray(fd.central, dtype=np.float64).ravel()
    fw, bw = (np.asarray(q, dtype=np.float64).ravel() for q in fd.one_sided())
    k1, k2 = np.asarray(fd.forward).ravel(), np.asarray(fd.backward).ravel()
    scale = max(np.abs(c).max(), np.abs(ana).max(), 1e-300)

    def rel(a, n):
        return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor * scale)

    kinked = rel(k1, k2) > (tol if kink_rtol is None else kink_rtol)
    err = rel(ana, c)
    err[kinked] = np.minimum(err, np.minimum(rel(ana, fw), rel(ana, bw)))[kinked]
    worst = int(np.argmax(err))
    return GradCheckReport(float(err[worst]), worst, bool(err[worst] < tol), c, ana, kinked, err)


def gradient_check(f, x, analytic, h=1e-6, tol=1e-4, vectorized=False, chunk=256, floor=1e-3,
                   kink_rtol=None):
    """Compare an analytic gradient with finite differences of ``f`` (see :func:`compare_gradients`)."""
    fd = central_differences(f, x, h, vectorized, chunk)
    return compare_gradients(analytic, fd, tol, floor, kink_rtol)


@dataclass
class RefineResult:
    depths: np.ndarray
    pose_params: np.ndarray
    history: list
    pose_history: list


def gradient_descent_refine(inp, w=LossWeights(), steps=200, lr=3e-6, update_depths=True,
                            update_poses=True, min_depth=1e-6):
    """Plain gradient descent on the snippet's depths and/or pose parameters.

    ``history`` and ``pose_history`` hold one entry per evaluated state
    (``steps + 1`` of them); no monotonicity is enforced.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    depths = inp.depths.copy()
    params = inp.pose_params.copy()
    history, pose_history = [], []
    first = None
    for step in range(steps + 1):
        rep = total_loss(inp.with_params(depths, params), w)
        history.append(rep)
        pose_history.append(params)
        if not np.isfinite(rep.total):
            raise NonFiniteEvaluation(f"loss became non-finite at step {step}")
        if first is None:
            first = rep.total
        elif rep.total > 10 * first:
            raise DivergenceDetected(f"total {rep.total:.6g} exceeds 10x initial {first:.6g} at step {step}")
        if step == steps:
            break
        if update_poses:
            params = params - lr * rep.grad_poses
        if update_depths:
            depths = np.maximum(depths - lr * rep.grad_depths, min_depth)
    return RefineResult(depths, params, history, pose_history)
