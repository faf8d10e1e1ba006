"""Snippet chaining, similarity alignment and trajectory error metrics."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import DegenerateConfiguration, LengthMismatch, OverlapMismatch
from .geometry import Pose, compose, invert

IDENTITY_TOL = 1e-12


def _positions(x):
    if isinstance(x, (Trajectory, Snippet)):
        return x.positions()
    return np.asarray(x, dtype=np.float64).reshape(-1, 3)


@dataclass
class Trajectory:
    """Camera-to-world poses indexed by frame number."""

    poses: list

    def __post_init__(self):
        self.poses = [p if isinstance(p, Pose) else Pose.from_matrix(p) for p in self.poses]
        if not self.poses:
            raise ValueError("a trajectory needs at least one pose")

    def __len__(self):
        return len(self.poses)

    def __getitem__(self, i):
        return self.poses[i]

    def positions(self):
        return np.stack([p.translation for p in self.poses])

    def transformed(self, scale, rotation, translation):
        """Apply ``x -> s R x + t`` to every camera."""
        r = np.asarray(rotation, dtype=np.float64)
        t = np.asarray(translation, dtype=np.float64)
        return Trajectory([Pose(r @ p.rotation, scale * r @ p.translation + t) for p in self.poses])

    def snippet(self, start, n=3):
        """Frames ``start .. start+n-1`` expressed relative to the first of them."""
        if start < 0 or start + n > len(self):
            raise IndexError(f"snippet {start}..{start + n - 1} outside 0..{len(self) - 1}")
        origin = invert(self.poses[start])
        return Snippet([compose(origin, p) for p in self.poses[start:start + n]], start=start)

    def snippets(self, n=3):
        return [self.snippet(s, n) for s in range(len(self) - n + 1)]


@dataclass
class Snippet:
    """``N`` poses relative to the snippet's first frame, which is the identity.

    ``start`` optionally records the global index of that first frame.
    """

    poses: list
    start: int | None = field(default=None)

    def __post_init__(self):
        self.poses = [p if isinstance(p, Pose) else Pose.from_matrix(p) for p in self.poses]
        if not self.poses:
            raise ValueError("a snippet needs at least one pose")
        first = self.poses[0]
        if (np.abs(first.rotation - np.eye(3)).max() > IDENTITY_TOL
                or np.abs(first.translation).max() > IDENTITY_TOL):
            raise ValueError("the first pose of a snippet must be the identity")

    def __len__(self):
        return len(self.poses)

    def positions(self):
        return np.stack([p.translation for p in self.poses])

    def scaled(self, s):
        return Snippet([Pose(p.rotation, s * p.translation) for p in self.poses], self.start)


def average_rotations(rotations):
    """Mean of nearby rotations: quaternions flipped into one hemisphere, averaged, renormalized."""
    q = Rotation.from_matrix(np.stack(rotations)).as_quat()
    q = np.where((q @ q[0] < 0)[:, None], -q, q)
    m = q.mean(0)
    return Rotation.from_quat(m / np.linalg.norm(m)).as_matrix()


def _relative(a, b):
    """Pose of ``b`` in the frame of ``a`` (both camera-to-world)."""
    return compose(invert(a), b)


def _check_overlap(prev, cur):
    if len(prev) != 3 or len(cur) != 3:
        raise OverlapMismatch(f"chaining expects 3-frame snippets, got {len(prev)} and {len(cur)}")
    if prev.start is not None and cur.start is not None and cur.start != prev.start + 1:
        raise OverlapMismatch(
            f"snippets starting at frames {prev.start} and {cur.start} do not share exactly 2 frames")


def chain_snippets(snippets):
    """Assemble a trajectory from 3-frame snippets that overlap by 2 frames.

    Frame 0 is the origin.  Each new snippet is rescaled so its motion
    between the two shared frames has the length already in the chain;
    the two estimates of that shared motion are then averaged (mean
    translation, quaternion-averaged rotation) and the new frame is
    appended from the snippet's own last step.
    """
    snippets = list(snippets)
    if not snippets:
        raise ValueError("need at least one snippet")
    first = snippets[0]
    if len(first) != 3 and len(snippets) > 1:
        raise OverlapMismatch(f"chaining expects 3-frame snippets, got {len(first)}")
    poses = list(first.poses)
    for prev, cur in zip(snippets, snippets[1:]):
        _check_overlap(prev, cur)
        k = len(poses) - 2                      # global index of cur's first frame
        # overlap motion in the chain's scale (prev was already rescaled into it)
        chained_old = _relative(poses[k], poses[k + 1])
        new = cur.poses[1]
        n_old, n_new = np.linalg.norm(chained_old.translation), np.linalg.norm(new.translation)
        s = n_old / n_new if n_new > 0 and n_old > 0 else 1.0
        rel = Pose(average_rotations([chained_old.rotation, new.rotation]),
                   0.5 * (chained_old.translation + s * new.translation))
        poses[k + 1] = compose(poses[k], rel)
        step = _relative(cur.poses[1], cur.poses[2])
        poses.append(compose(poses[k + 1], Pose(step.rotation, s * step.translation)))
    return Trajectory(poses)


def umeyama_align(est, gt):
    """Least-squares similarity ``(s, R, t)`` minimizing ``sum |s R x_i + t - y_i|^2``."""
    x, y = _positions(est), _positions(gt)
    if len(x) != len(y):
        raise LengthMismatch(f"trajectories have {len(x)} and {len(y)} frames")
    if len(x) < 3:
        raise DegenerateConfiguration("similarity alignment needs at least 3 positions")
    mx, my = x.mean(0), y.mean(0)
    xc, yc = x - mx, y - my
    sv = np.linalg.svd(xc, compute_uv=False)
    if sv[0] == 0 or sv[1] <= 1e-12 * sv[0]:
        raise DegenerateConfiguration("estimated positions are collinear or coincident")
    cov = yc.T @ xc / len(x)
    u, d, vt = np.linalg.svd(cov)
    sign = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        sign[2] = -1.0                          # reflection correction
    r = u @ np.diag(sign) @ vt
    var_x = (xc ** 2).sum() / len(x)
    s = float((d * sign).sum() / var_x)
    t = my - s * r @ mx
    return s, r, t


def alignment_residual(est, gt, s, r, t):
    x, y = _positions(est), _positions(gt)
    return float(((s * x @ np.asarray(r).T + t - y) ** 2).sum())


def snippet_ate(est, gt):
    """RMSE over the snippet after pinning first frames and fitting one scale."""
    x, y = _positions(est), _positions(gt)
    if len(x) != len(y):
        raise LengthMismatch(f"snippets have {len(x)} and {len(y)} frames")
    x, y = x - x[0], y - y[0]
    den = (x * x).sum()
    s = (x * y).sum() / den if den > 0 else 1.0
    return float(np.sqrt(((s * x - y) ** 2).sum(-1).mean()))


def median_ape(est, gt):
    """Median per-frame position error after full-trajectory similarity alignment."""
    s, r, t = umeyama_align(est, gt)
    x, y = _positions(est), _positions(gt)
    return float(np.median(np.linalg.norm(s * x @ r.T + t - y, axis=-1)))
