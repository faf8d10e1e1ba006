"""Analytic synthetic scenes: exact depth, exact poses, exact matches.

Geometry is a set of planes and spheres carrying a smooth solid
texture.  Every pixel is rendered by intersecting its ray with the
geometry and evaluating the texture at the hit point, so the only
discrepancy between a rendered view and a warped neighbour is the
bilinear interpolation of the warp itself.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientVisibility, NoIntersection
from .geometry import Intrinsics, Pose, compose, invert, pose_to_params, so3_exp
from .objective import SnippetInput
from .sparse import MatchSet

# Interpolation floor of the photometric terms at ground truth, summed over
# both source views, for the occlusion-free scenarios (lateral, forward,
# orbit).  Bilinear resampling of the texture is the only error left there;
# measured maxima over seeds 0-5 at 64x64 are 3.0e-3 and 1.7e-4.  The sphere
# scenario has disocclusions and is not covered.
PIXEL_FLOOR = 0.01
SSIM_FLOOR = 1e-3


@dataclass(frozen=True)
class SolidTexture:
    """Sum of random 3-D sinusoids around mid-grey, bounded inside (0, 1)."""

    seed: int = 0
    waves: int = 6
    min_wavelength: float = 0.2
    max_wavelength: float = 0.6
    amplitude: float = 0.4

    def _params(self):
        rng = np.random.default_rng(self.seed)
        dirs = rng.normal(size=(self.waves, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        lam = rng.uniform(self.min_wavelength, self.max_wavelength, self.waves)
        phase = rng.uniform(0, 2 * np.pi, self.waves)
        amp = rng.dirichlet(np.ones(self.waves)) * self.amplitude
        return dirs / lam[:, None], phase, amp

    def __call__(self, points):
        freq, phase, amp = self._params()
        arg = 2 * np.pi * (np.asarray(points) @ freq.T) + phase
        return 0.5 + (np.sin(arg) * amp).sum(-1)


@dataclass(frozen=True)
class Plane:
    """Points with ``normal . X = offset`` (world frame)."""

    normal: tuple
    offset: float

    def hit(self, origin, dirs):
        n = np.asarray(self.normal, dtype=np.float64)
        denom = dirs @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            lam = (self.offset - origin @ n) / denom
        return np.where((np.abs(denom) > 1e-12) & (lam > 0), lam, np.inf)


@dataclass(frozen=True)
class Sphere:
    center: tuple
    radius: float

    def hit(self, origin, dirs):
        oc = origin - np.asarray(self.center, dtype=np.float64)
        a = (dirs * dirs).sum(-1)
        b = 2 * (dirs @ oc)
        c = oc @ oc - self.radius ** 2
        disc = b * b - 4 * a * c
        root = np.sqrt(np.maximum(disc, 0))
        near = (-b - root) / (2 * a)
        far = (-b + root) / (2 * a)
        lam = np.where(near > 0, near, far)
        return np.where((disc >= 0) & (lam > 0), lam, np.inf)


@dataclass
class SyntheticScene:
    intrinsics: Intrinsics
    height: int
    width: int
    path: list                                   # camera-to-world poses
    surfaces: list = field(default_factory=list)
    texture: SolidTexture = field(default_factory=SolidTexture)

    def __len__(self):
        return len(self.path)

    def relative_pose(self, src, dst):
        """Transform taking points of frame ``src`` into frame ``dst``."""
        return compose(invert(self.path[dst]), self.path[src])

    def cast(self, frame, u, v):
        """Depth (camera z) of rays through pixels ``u, v``; ``inf`` on a miss."""
        k = self.intrinsics
        u, v = np.asarray(u, dtype=np.float64), np.asarray(v, dtype=np.float64)
        dc = np.stack([(u - k.cx) / k.fx, (v - k.cy) / k.fy, np.ones_like(u)], -1)
        pose = self.path[frame]
        dw = dc @ pose.rotation.T
        lam = np.full(u.shape, np.inf)
        for s in self.surfaces:
            lam = np.minimum(lam, s.hit(pose.translation, dw))
        # camera-frame ray has unit z, so the ray parameter is the depth
        return lam, pose.translation + lam[..., None] * dw

    def render(self, frame, strict=True):
        """Image ``(H, W)`` in [0, 1], depth ``(H, W)`` and hit mask."""
        if not 0 <= frame < len(self.path):
            raise IndexError(f"frame {frame} out of range 0..{len(self.path) - 1}")
        v, u = np.mgrid[0:self.height, 0:self.width].astype(np.float64)
        depth, pts = self.cast(frame, u, v)
        hit = np.isfinite(depth)
        if strict and not hit.all():
            raise NoIntersection(f"{int((~hit).sum())} rays of frame {frame} miss all geometry")
        img = np.where(hit, self.texture(np.where(hit[..., None], pts, 0.0)), 0.0)
        return img, np.where(hit, depth, 0.0), hit


def default_intrinsics(height, width):
    f = 0.9 * width
    return Intrinsics(f, f, (width - 1) / 2.0, (height - 1) / 2.0)


def _translations(offsets):
    return [Pose(np.eye(3), o) for o in offsets]


SCENARIOS = ("lateral", "forward", "sphere", "orbit")


def make_scene(name="lateral", frames=3, height=64, width=64, seed=0, baseline=0.04):
    """Named scenes whose centre frame sits at the origin with mean depth 1."""
    k = default_intrinsics(height, width)
    c = (frames - 1) // 2
    steps = np.arange(frames) - c
    tex = SolidTexture(seed=seed)
    wall = Plane((0.0, 0.0, 1.0), 1.0)
    if name == "lateral":
        path = _translations([(s * baseline, 0.2 * s * baseline, 0.0) for s in steps])
        surfaces = [wall]
    elif name == "forward":
        path = _translations([(0.1 * s * baseline, 0.0, s * baseline) for s in steps])
        surfaces = [wall]
    elif name == "sphere":
        path = _translations([(s * baseline, 0.0, 0.0) for s in steps])
        surfaces = [Plane((0.0, 0.0, 1.0), 1.5), Sphere((0.0, 0.0, 1.0), 0.3)]
    elif name == "orbit":
        # small yaw sweep around a point on a slanted wall
        path = []
        for s in steps:
            yaw = 0.02 * s
            r = so3_exp([0.0, yaw, 0.0])
            centre = np.array([0.0, 0.0, 1.0])
            path.append(Pose(r, centre - r @ centre + [0.0, 0.01 * s, 0.0]))
        surfaces = [Plane((0.0, -0.2, 1.0), 1.0)]
    else:
        raise ValueError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    return SyntheticScene(k, height, width, path, surfaces, tex)


@dataclass
class MatchFileRecord:
    frame_a: int
    frame_b: int
    pairs: np.ndarray

    def as_matchset(self):
        return MatchSet(self.pairs)


def generate_matches(scene, frame_a, frame_b, count, seed, third=None, noise=0.0, margin=1.0):
    """Exact correspondences of random surface points seen in all snippet frames.

    ``p`` is in ``frame_a``; ``p'`` in ``frame_b``.  Points must also be
    visible (unoccluded, in bounds) in ``third`` when given.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    k = scene.intrinsics
    others = [frame_b] + ([third] if third is not None else [])
    found = []
    for _ in range(10 * count):
        if len(found) == count:
            break
        u = rng.uniform(margin, scene.width - 1 - margin)
        v = rng.uniform(margin, scene.height - 1 - margin)
        depth, _ = scene.cast(frame_a, np.array(u), np.array(v))
        if not np.isfinite(depth):
            continue
        xa = depth * np.array([(u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0])
        ok = True
        proj = None
        for o in others:
            xo = scene.relative_pose(frame_a, o).apply(xa)
            if xo[2] <= 1e-9:
                ok = False
                break
            uo, vo = k.fx * xo[0] / xo[2] + k.cx, k.fy * xo[1] / xo[2] + k.cy
            if not (margin <= uo <= scene.width - 1 - margin and margin <= vo <= scene.height - 1 - margin):
                ok = False
                break
            seen, _ = scene.cast(o, np.array(uo), np.array(vo))
            if abs(seen - xo[2]) > 1e-9 * max(1.0, xo[2]):
                ok = False
                break
            if o == frame_b:
                proj = (uo, vo)
        if ok:
            found.append((u, v, *proj))
    if len(found) < count:
        raise InsufficientVisibility(f"only {len(found)} of {count} co-visible points in {10 * count} draws")
    pairs = np.array(found)
    if noise > 0:
        pairs[:, 2:] += rng.normal(scale=noise, size=(count, 2))
    return MatchFileRecord(frame_a, frame_b, pairs)


def build_snippet(scene, center=1, count=100, seed=0, noise=0.0, refine=False):
    """Ground-truth :class:`SnippetInput` for frames ``center-1 .. center+1``."""
    idx = (center - 1, center, center + 1)
    imgs, depths = [], []
    for i in idx:
        img, d, _ = scene.render(i)
        imgs.append(img)
        depths.append(d)
    params = np.stack([pose_to_params(scene.relative_pose(center, s)).as_array() for s in (idx[0], idx[2])])
    matches = tuple(
        generate_matches(scene, center, s, count, seed + j, third=o, noise=noise).as_matchset()
        for j, (s, o) in enumerate(((idx[0], idx[2]), (idx[2], idx[0])))
    )
    return SnippetInput(np.stack(imgs)[:, None], np.stack(depths), params, matches,
                        scene.intrinsics, refine=refine)


def circular_trajectory(n, radius=10.0, turns=1.0, wobble=0.5):
    """Camera-to-world poses on a horizontal circle, facing along the tangent."""
    poses = []
    for i in range(n):
        a = 2 * np.pi * turns * i / n
        pos = np.array([radius * np.cos(a), wobble * np.sin(3 * a), radius * np.sin(a)])
        # yaw so the optical axis (z) follows the direction of travel
        r = so3_exp([0.0, -a, 0.0])
        poses.append(Pose(r, pos))
    return poses


def perturb_translations(pose_params, fraction, seed):
    """Displace each translation by ``fraction`` of its length in a seeded random direction."""
    rng = np.random.default_rng(seed)
    out = np.array(pose_params, dtype=np.float64).reshape(-1, 6).copy()
    for row in out:
        d = rng.standard_normal(3)
        row[3:] += fraction * np.linalg.norm(row[3:]) * d / np.linalg.norm(d)
    return out
