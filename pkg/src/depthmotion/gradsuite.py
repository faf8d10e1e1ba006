"""Full-resolution gradient verification of every objective term.

Analytic gradients come from torch autograd on :func:`loss_terms`;
numeric ones from finite differences of the independent loop
implementation in :mod:`depthmotion.reference`.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import torch

from .objective import TERMS, GradCheckReport, LossWeights, compare_gradients, loss_terms
from .reference import finite_difference_gradients, second_order_one_sided


@dataclass
class TermCheck:
    name: str
    depth: GradCheckReport
    pose: GradCheckReport

    @property
    def passed(self):
        return self.depth.passed and self.pose.passed

    def row(self):
        return {
            "term": self.name,
            "depth_max_rel_error": self.depth.max_rel_error,
            "depth_kinks": self.depth.kink_count,
            "pose_max_rel_error": self.pose.max_rel_error,
            "pose_kinks": self.pose.kink_count,
            "passed": self.passed,
        }


@dataclass
class SuiteResult:
    checks: list
    seconds: float

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def rows(self):
        return [c.row() for c in self.checks]


def perturbed_point(inp, seed=0, depth_noise=0.01, pose_noise=0.002):
    """A random evaluation point near ``inp``: multiplicative depth and additive pose noise."""
    rng = np.random.default_rng(seed)
    d = inp.depths * (1 + depth_noise * rng.standard_normal(inp.depths.shape))
    p = inp.pose_params + pose_noise * rng.standard_normal(inp.pose_params.shape)
    return inp.with_params(np.maximum(d, 1e-3), p)


def analytic_gradients(inp, w=LossWeights()):
    """Per-term autograd gradients, shaped ``(7, 3, H, W)`` and ``(7, 2, 6)``."""
    d = torch.tensor(inp.depths, requires_grad=True)
    p = torch.tensor(inp.pose_params, requires_grad=True)
    terms, _ = loss_terms(inp, d, p, w)
    gd, gp = [], []
    for name in TERMS:
        a, b = torch.autograd.grad(terms[name], (d, p), retain_graph=True, allow_unused=True)
        gd.append(np.zeros(inp.depths.shape) if a is None else a.numpy())
        gp.append(np.zeros(inp.pose_params.shape) if b is None else b.numpy())
    return np.stack(gd), np.stack(gp)


def _combine(fd, weights):
    """Weighted sum of per-term quotients (quotients are linear in the function)."""
    w = np.asarray(weights).reshape((-1,) + (1,) * (fd.central.ndim - 1))
    fields = [fd.central, fd.forward, fd.backward, fd.forward2, fd.backward2]
    summed = [None if f is None else (w * f).sum(0) for f in fields]
    return type(fd)(*summed)


def run_gradient_suite(inp, w=LossWeights(), tol=1e-4, floor=1e-3):
    """Check all seven terms and the weighted total w.r.t. all depths and poses.

    Coordinates whose central check fails while their forward and backward
    quotients disagree are re-estimated with second-order one-sided
    quotients, so a stencil straddling a kink is scored from its smooth side.
    """
    if inp.refine:
        raise ValueError("the gradient suite covers the unmasked phase only")
    start = time.perf_counter()
    ad, ap = analytic_gradients(inp, w)
    fdd, fdp = finite_difference_gradients(inp, alpha=w.alpha)

    def failing(analytic, fd):
        """Coordinates, over all terms, that fail while straddling a kink."""
        bad = set()
        for q in range(len(TERMS)):
            rep = compare_gradients(analytic[q], fd[q], tol, floor)
            flat = np.flatnonzero((rep.errors >= tol) & rep.kinked)
            bad.update(zip(*np.unravel_index(flat, analytic.shape[1:])))
        return sorted(bad)

    dc, pc = failing(ad, fdd), failing(ap, fdp)
    if dc or pc:
        fdd, fdp = second_order_one_sided(inp, fdd, fdp, dc, pc, alpha=w.alpha)

    checks = [TermCheck(name, compare_gradients(ad[q], fdd[q], tol, floor),
                        compare_gradients(ap[q], fdp[q], tol, floor))
              for q, name in enumerate(TERMS)]
    tw = [w.term_weights()[n] for n in TERMS]
    checks.append(TermCheck("total",
                            compare_gradients(np.tensordot(tw, ad, 1), _combine(fdd, tw), tol, floor),
                            compare_gradients(np.tensordot(tw, ap, 1), _combine(fdp, tw), tol, floor)))
    return SuiteResult(checks, time.perf_counter() - start)
