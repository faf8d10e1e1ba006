from dataclasses import replace

import numpy as np
import pytest

from depthmotion.consistency import chained_pose
from depthmotion.errors import DivergenceDetected, NonFiniteEvaluation
from depthmotion.geometry import as_tensor, invert_rt, params_to_rt
from depthmotion.gradsuite import analytic_gradients, perturbed_point
from depthmotion.objective import (
    TERMS, LossWeights, SnippetInput, central_differences, compare_gradients, gradient_check,
    gradient_descent_refine, total_loss,
)
from depthmotion.sparse import MatchSet
from depthmotion.synthetic import build_snippet, default_intrinsics, make_scene
from depthmotion.warping import compute_warp


def test_weights_defaults_and_validation():
    w = LossWeights()
    assert w.as_dict() == dict(alpha=0.15, beta=0.1, gamma1=0.001, gamma2=0.001, mu1=0.1, mu2=0.1)
    with pytest.raises(ValueError):
        LossWeights(alpha=1.2)
    with pytest.raises(ValueError):
        LossWeights(mu1=-0.1)


def test_snippet_validation(lateral_snippet):
    inp = lateral_snippet
    with pytest.raises(ValueError):
        SnippetInput(inp.images[:2], inp.depths[:2], inp.pose_params, inp.matches, inp.intrinsics)
    bad = inp.depths.copy()
    bad[0, 0, 0] = -1
    with pytest.raises(ValueError):
        SnippetInput(inp.images, bad, inp.pose_params, inp.matches, inp.intrinsics)


def test_fully_static_snippet_has_zero_loss():
    rng = np.random.default_rng(0)
    img = rng.uniform(size=(1, 16, 16))
    p = rng.uniform(2, 13, (10, 2))
    inp = SnippetInput(np.stack([img] * 3), np.full((3, 16, 16), 2.0), np.zeros((2, 6)),
                       (MatchSet(np.c_[p, p]), MatchSet(np.c_[p, p])), default_intrinsics(16, 16))
    rep = total_loss(inp)
    assert rep.total < 1e-12
    assert all(v == 0.0 for n, v in rep.terms.items() if n != "reproj")
    assert rep.terms["reproj"] < 1e-12       # pixel -> ray -> pixel round-off only
    assert "epi" in rep.flags                # zero translation has no essential matrix


def test_truth_is_below_floor(lateral_snippet):
    rep = total_loss(lateral_snippet)
    assert rep.total < 0.02
    assert rep.flags == ()
    assert np.all(np.isfinite(rep.grad_depths)) and np.all(np.isfinite(rep.grad_poses))


def test_alpha_only_isolates_pixel_term(lateral_snippet):
    inp = perturbed_point(lateral_snippet, seed=1)
    rep = total_loss(inp, LossWeights.only(alpha=1.0))
    assert rep.total == rep.terms["pixel"]


def test_weight_linearity(lateral_snippet):
    inp = perturbed_point(lateral_snippet, seed=2)
    for w in (LossWeights(), LossWeights(0.4, 0.3, 0.02, 0.05, 0.7, 0.2)):
        rep = total_loss(inp, w, grads=False)
        tw = w.term_weights()
        assert abs(rep.total - sum(tw[n] * rep.terms[n] for n in TERMS)) <= 1e-12 * max(rep.total, 1.0)


def test_determinism(lateral_snippet):
    inp = perturbed_point(lateral_snippet, seed=3)
    a, b = total_loss(inp), total_loss(inp)
    assert a.total == b.total
    assert np.array_equal(a.grad_depths, b.grad_depths)
    assert np.array_equal(a.grad_poses, b.grad_poses)


def test_term_isolation_by_superposition(lateral_snippet):
    inp = perturbed_point(lateral_snippet, seed=4)
    w = LossWeights()
    gd, gp = analytic_gradients(inp, w)
    full = total_loss(inp, w)
    for name, term in (("beta", "smooth"), ("gamma1", "epi"), ("gamma2", "reproj"), ("mu1", "depth"), ("mu2", "multi")):
        q = TERMS.index(term)
        reduced = total_loss(inp, LossWeights(**{**w.as_dict(), name: 0.0}))
        wi = getattr(w, name)
        np.testing.assert_allclose(full.grad_depths - reduced.grad_depths, wi * gd[q], rtol=0,
                                   atol=1e-12 * np.abs(full.grad_depths).max())
        np.testing.assert_allclose(full.grad_poses - reduced.grad_poses, wi * gp[q], rtol=0,
                                   atol=1e-12 * np.abs(full.grad_poses).max())


def _footprint(shape, u, v, valid):
    """Pixels touched by bilinear lookups at the valid coordinates."""
    h, w = shape
    hit = np.zeros(shape, dtype=bool)
    u, v = u[valid], v[valid]
    for du in (0, 1):
        for dv in (0, 1):
            hit[np.clip(np.floor(v).astype(int) + dv, 0, h - 1), np.clip(np.floor(u).astype(int) + du, 0, w - 1)] = True
    return hit


def test_source_depth_gradient_is_zero_outside_every_mask():
    scene = make_scene("lateral", baseline=0.15)
    inp = build_snippet(scene, count=20)
    rep = total_loss(inp)
    k = inp.intrinsics
    d = inp.depths
    d2n = d[1] / d[1].mean()
    rt13 = chained_pose(params_to_rt(inp.pose_params[0]), params_to_rt(inp.pose_params[1]))
    rt31 = invert_rt(*rt13)
    for frame, slot, other_rt in ((0, 0, rt31), (2, 1, rt13)):
        w_t = compute_warp(d2n, inp.pose_params[slot], k)
        # the source frame's own pixels enter the chained term where its warp is valid
        w_own = compute_warp(as_tensor(d[frame]), rt13 if frame == 0 else rt31, k, check=False)
        w_in = compute_warp(as_tensor(d[2 - frame]), other_rt, k, check=False)
        touched = (_footprint(d2n.shape, w_t.u.numpy(), w_t.v.numpy(), w_t.valid.numpy())
                   | _footprint(d2n.shape, w_in.u.numpy(), w_in.v.numpy(), w_in.valid.numpy())
                   | w_own.valid.numpy())
        assert (~touched).sum() > 0
        assert np.all(rep.grad_depths[frame][~touched] == 0.0)


def test_total_pose_gradient_matches_finite_differences(lateral_snippet):
    inp = perturbed_point(lateral_snippet, seed=5)
    rep = total_loss(inp)
    x0 = inp.pose_params.ravel()

    def f(x):
        return total_loss(inp.with_params(pose_params=x.reshape(2, 6)), grads=False).total

    res = gradient_check(f, x0, rep.grad_poses.ravel(), h=1e-6 * np.maximum(np.abs(x0), 1e-2), tol=1e-4)
    assert res.passed, res.max_rel_error


def test_gradient_check_quadratic_and_negative_control():
    x = np.random.default_rng(6).normal(size=20)
    f = lambda y: float(y @ y)
    assert gradient_check(f, x, 2 * x, h=1e-3, tol=1e-9).max_rel_error < 1e-9
    assert not gradient_check(f, x, 2.2 * x, h=1e-3).passed


def test_gradient_check_vectorized_matches_loop():
    x = np.random.default_rng(7).normal(size=9)
    f = lambda y: float(np.sin(y).sum())
    fb = lambda b: np.sin(b).sum(-1)
    a = central_differences(f, x, 1e-5)
    b = central_differences(fb, x, 1e-5, vectorized=True, chunk=4)
    np.testing.assert_array_equal(a.central, b.central)


def test_gradient_check_kinks_use_one_sided_quotients():
    f = lambda y: float(np.abs(y).sum())
    x = np.array([0.5e-6, -2.0, 3.0])       # first coordinate: stencil straddles the kink of |x|
    fd = central_differences(f, x, 1e-6)
    rep = compare_gradients(np.sign(x), fd)
    assert rep.kinked[0] and not rep.kinked[1:].any()
    assert rep.passed


def test_gradient_check_rejects_nonfinite_and_bad_steps():
    with pytest.raises(NonFiniteEvaluation):
        gradient_check(lambda y: float("nan") if y[0] == 0 else 1.0, np.array([0.0]), np.array([1.0]))
    with pytest.raises(ValueError):
        central_differences(lambda y: 0.0, np.zeros(2), 0.0)


def test_refine_zero_lr_keeps_parameters(lateral_snippet):
    inp = perturbed_point(lateral_snippet, seed=8)
    res = gradient_descent_refine(inp, steps=3, lr=0.0)
    assert np.array_equal(res.depths, inp.depths)
    assert np.array_equal(res.pose_params, inp.pose_params)
    assert len(res.history) == 4 and len(res.pose_history) == 4


def test_refine_is_near_stationary_at_truth(lateral_snippet):
    inp = lateral_snippet
    res = gradient_descent_refine(inp, steps=50)
    moved = np.linalg.norm(res.pose_params - inp.pose_params) / np.linalg.norm(inp.pose_params)
    assert moved < 1e-3
    assert np.abs(res.depths - inp.depths).max() / inp.depths.mean() < 1e-3


def test_refine_detects_divergence_and_bad_arguments(lateral_snippet):
    inp = perturbed_point(lateral_snippet, seed=9)
    with pytest.raises((DivergenceDetected, NonFiniteEvaluation)):
        gradient_descent_refine(inp, steps=20, lr=10.0)
    with pytest.raises(ValueError):
        gradient_descent_refine(inp, steps=0)
    with pytest.raises(ValueError):
        gradient_descent_refine(inp, lr=-1.0)


def test_refine_phase_masks_pixel_term(lateral_snippet):
    inp = perturbed_point(lateral_snippet, seed=10)
    plain = total_loss(inp, grads=False)
    masked = total_loss(replace(inp, refine=True), grads=False)
    assert masked.terms["pixel"] != plain.terms["pixel"]
    for name in TERMS:
        if name != "pixel":
            assert masked.terms[name] == plain.terms[name]
