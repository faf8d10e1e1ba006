import numpy as np
import pytest
import torch

from depthmotion.consistency import (
    aligned_scale_ratio, chained_pose, depth_consistency_loss, mean_normalize, multiview_loss,
)
from depthmotion.errors import EmptyMask, NonPositiveDepth, ZeroSynthMean
from depthmotion.geometry import compose_rt, invert_rt, so3_exp
from depthmotion.synthetic import default_intrinsics
from depthmotion.warping import compute_warp, sample


def test_mean_normalize_examples():
    n = mean_normalize(np.full((4, 4), 5.0))
    np.testing.assert_array_equal(n.depth.numpy(), np.ones((4, 4)))
    assert float(n.applied_scale) == pytest.approx(0.2, rel=1e-15)
    np.testing.assert_array_equal(mean_normalize(np.array([[1.0, 3.0]])).depth.numpy(), [[0.5, 1.5]])
    d = np.random.default_rng(0).uniform(0.1, 80, (30, 40))
    assert abs(float(mean_normalize(d).depth.mean()) - 1) < 1e-12
    with pytest.raises(NonPositiveDepth):
        mean_normalize(np.zeros((2, 2)))


def test_scale_ratio_examples():
    t = np.random.default_rng(1).uniform(1, 2, (5, 6))
    m = np.ones((5, 6))
    assert float(aligned_scale_ratio(t, t, m)) == 1.0
    assert float(aligned_scale_ratio(t, 2 * t, m)) == 0.5
    with pytest.raises(EmptyMask):
        aligned_scale_ratio(t, t, np.zeros((5, 6)))
    with pytest.raises(ZeroSynthMean):
        aligned_scale_ratio(t, np.zeros((5, 6)), m)


def test_scale_ratio_recovers_interframe_scale(lateral_scene):
    """A source depth map off by a factor 3 is pulled back by ~1/3."""
    k = lateral_scene.intrinsics
    _, d_t, _ = lateral_scene.render(1)
    _, d_s, _ = lateral_scene.render(0)
    warp = compute_warp(d_t, lateral_scene.relative_pose(1, 0), k)
    synth, _, _ = sample(3.0 * d_s, warp.u, warp.v, warp.valid)
    ratio = float(aligned_scale_ratio(d_t, synth, warp.valid))
    assert ratio == pytest.approx(1 / 3, rel=0.01)


def test_hand_example():
    loss = depth_consistency_loss(np.array([[1.0, 1.0]]), np.array([[1.0, 3.0]]), np.ones((1, 2)))
    assert float(loss) == 0.5


def test_proportional_synth_depth_gives_zero():
    t = np.random.default_rng(2).uniform(1, 2, (6, 7))
    for lam in (0.25, 3.0, 7.5):
        assert float(depth_consistency_loss(t, lam * t, np.ones((6, 7)))) < 1e-15


def test_invariance_to_synth_rescaling():
    rng = np.random.default_rng(3)
    t, s = rng.uniform(1, 2, (8, 9)), rng.uniform(1, 2, (8, 9))
    m = rng.uniform(size=(8, 9)) > 0.3
    base = float(depth_consistency_loss(t, s, m))
    assert base > 0
    for lam in (0.125, 2.0, 1024.0):
        assert float(depth_consistency_loss(t, lam * s, m)) == base
    for lam in (0.3, 1.7, 123.4):
        assert float(depth_consistency_loss(t, lam * s, m)) == pytest.approx(base, rel=1e-13)


def test_linear_in_joint_target_rescaling():
    rng = np.random.default_rng(4)
    t, s = rng.uniform(1, 2, (8, 9)), rng.uniform(1, 2, (8, 9))
    m = np.ones((8, 9))
    base = float(depth_consistency_loss(t, s, m))
    for lam in (0.5, 3.0):
        assert float(depth_consistency_loss(lam * t, s, m)) == pytest.approx(lam * base, rel=1e-13)


def test_consistency_at_truth(lateral_snippet):
    inp = lateral_snippet
    k = inp.intrinsics
    d2 = inp.depths[1]
    for src, slot in ((0, 0), (2, 1)):
        warp = compute_warp(d2, inp.pose_params[slot], k)
        synth, _, _ = sample(inp.depths[src], warp.u, warp.v, warp.valid)
        assert float(depth_consistency_loss(d2, synth, warp.valid)) < 1e-3 * d2.mean()


def test_chained_pose_round_trip():
    a = (torch.tensor(so3_exp([0.1, -0.2, 0.05])), torch.tensor([0.3, 0.1, -0.2], dtype=torch.float64))
    b = (torch.tensor(so3_exp([-0.02, 0.04, 0.3])), torch.tensor([-0.1, 0.5, 0.2], dtype=torch.float64))
    r13, t13 = chained_pose(a, b)
    r31, t31 = chained_pose(b, a)
    r, t = compose_rt((r13, t13), (r31, t31))
    assert float((r - torch.eye(3, dtype=r.dtype)).norm()) < 1e-12
    assert float(t.norm()) < 1e-12
    # frame 1 -> 3 equals T_2->3 after undoing T_2->1
    x = torch.tensor([0.3, -0.7, 2.0], dtype=torch.float64)
    x2 = invert_rt(*a)[0] @ (x - a[1])
    np.testing.assert_allclose((r13 @ x + t13).numpy(), (b[0] @ x2 + b[1]).numpy(), atol=1e-14)


def test_multiview_static_identity_is_zero():
    rng = np.random.default_rng(5)
    img = rng.uniform(size=(1, 16, 16))
    frames = np.stack([img] * 3)
    depths = np.stack([np.full((16, 16), 2.0)] * 3)
    ident = np.zeros(6)
    res = multiview_loss(frames, depths, ident, ident, default_intrinsics(16, 16))
    assert float(res.loss) == 0.0 and not res.empty


def test_multiview_truth_and_scale_inconsistency(lateral_snippet):
    inp = lateral_snippet
    frames, depths, k = inp.images, inp.depths, inp.intrinsics
    p21, p23 = inp.pose_params
    base = float(multiview_loss(frames, depths, p21, p23, k).loss)
    assert base < 0.01
    bad = p23.copy()
    bad[3:] *= 1.5
    assert float(multiview_loss(frames, depths, p21, bad, k).loss) > base


def test_multiview_empty_mask_flag(lateral_snippet):
    inp = lateral_snippet
    far = np.array([0, 0, 0, 50.0, 0, 0])
    res = multiview_loss(inp.images, inp.depths, inp.pose_params[0], far, inp.intrinsics)
    assert res.empty
    assert np.isfinite(float(res.loss))
