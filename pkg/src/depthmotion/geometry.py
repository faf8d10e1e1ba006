"""Rigid transforms, pinhole intrinsics and the SO(3) exponential/log maps.

Numpy types here are the value types used for I/O, evaluation and
bookkeeping.  The ``*_t`` helpers at the bottom are the differentiable
torch counterparts used inside the losses.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import torch

from .errors import AngleAtPi, BehindCamera, NonPositiveDepth

_ORTHO_DRIFT = 1e-12
_MIN_Z = 1e-9


class PixelCoord(NamedTuple):
    u: float
    v: float


def skew(w):
    """Cross-product matrix ``[w]_x`` of a 3-vector."""
    x, y, z = np.asarray(w, dtype=np.float64)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def _orthonormalize(r):
    u, _, vt = np.linalg.svd(r)
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    def to_matrix(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def to_inverse_matrix(self):
        return np.array([
            [1.0 / self.fx, 0.0, -self.cx / self.fx],
            [0.0, 1.0 / self.fy, -self.cy / self.fy],
            [0.0, 0.0, 1.0],
        ])


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform ``x -> R x + t``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m):
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points):
        """Transform points of shape ``(..., 3)``."""
        return np.asarray(points) @ self.rotation.T + self.translation

    def __matmul__(self, other):
        return compose(self, other)

    def __repr__(self):
        return f"Pose(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


@dataclass(frozen=True, eq=False)
class PoseParams:
    """Minimal 6-DoF parameterization: axis-angle rotation plus translation."""

    rotation_vector: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation_vector", np.array(self.rotation_vector, dtype=np.float64).reshape(3))
        object.__setattr__(self, "translation", np.array(self.translation, dtype=np.float64).reshape(3))

    def as_array(self):
        return np.concatenate([self.rotation_vector, self.translation])

    @classmethod
    def from_array(cls, a):
        a = np.asarray(a, dtype=np.float64).reshape(6)
        return cls(a[:3], a[3:])


def compose(a, b):
    """Transform applying ``b`` first, then ``a``."""
    r = a.rotation @ b.rotation
    if np.abs(r.T @ r - np.eye(3)).max() > _ORTHO_DRIFT:
        r = _orthonormalize(r)
    return Pose(r, a.rotation @ b.translation + a.translation)


def invert(p):
    rt = p.rotation.T
    return Pose(rt, -rt @ p.translation)


def so3_exp(w):
    """Rodrigues formula; exact at ``w = 0``."""
    w = np.asarray(w, dtype=np.float64).reshape(3)
    theta2 = float(w @ w)
    k = skew(w)
    if theta2 < 1e-16:
        return np.eye(3) + k + 0.5 * k @ k
    theta = np.sqrt(theta2)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / theta2
    return np.eye(3) + a * k + b * (k @ k)


def so3_log(r):
    r = np.asarray(r, dtype=np.float64)
    cos = np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos)
    if np.pi - theta < 1e-9:
        raise AngleAtPi(f"rotation angle {theta!r} is within 1e-9 of pi")
    vee = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    if theta < 1e-6:
        # theta / sin(theta) ~ 1 + theta^2 / 6
        return 0.5 * (1.0 + theta * theta / 6.0) * vee
    if theta < np.pi / 2:
        return theta / (2.0 * np.sin(theta)) * vee
    # near pi the antisymmetric part vanishes; read the axis off the symmetric part
    b = 0.5 * (r + r.T) - cos * np.eye(3)
    i = int(np.argmax(np.diag(b)))
    axis = b[:, i] / np.sqrt(b[i, i])
    axis /= np.linalg.norm(axis)
    if axis @ vee < 0:
        axis = -axis
    return theta * axis


def params_to_pose(params):
    if not isinstance(params, PoseParams):
        params = PoseParams.from_array(params)
    return Pose(so3_exp(params.rotation_vector), params.translation)


def pose_to_params(p):
    return PoseParams(so3_log(p.rotation), p.translation.copy())


def project(point, k):
    x, y, z = np.asarray(point, dtype=np.float64)
    if z <= _MIN_Z:
        raise BehindCamera(f"point depth {z!r} is not in front of the camera")
    return PixelCoord(k.fx * x / z + k.cx, k.fy * y / z + k.cy)


def backproject(p, depth, k):
    if not depth > 0:
        raise NonPositiveDepth(f"depth must be positive, got {depth!r}")
    u, v = p
    return depth * np.array([(u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0])


# ---------------------------------------------------------------------------
# torch counterparts (arbitrary leading batch dimensions)

DTYPE = torch.float64


def as_tensor(x):
    if isinstance(x, torch.Tensor):
        return x if x.dtype == DTYPE else x.to(DTYPE)
    a = np.asarray(x, dtype=np.float64)
    return torch.as_tensor(a if a.flags.writeable else a.copy())


def skew_t(w):
    x, y, z = w.unbind(-1)
    o = torch.zeros_like(x)
    return torch.stack([
        torch.stack([o, -z, y], -1),
        torch.stack([z, o, -x], -1),
        torch.stack([-y, x, o], -1),
    ], -2)


def rotvec_to_matrix_t(w):
    theta2 = (w * w).sum(-1)
    small = theta2 < 1e-8
    safe2 = torch.where(small, torch.ones_like(theta2), theta2)
    theta = safe2.sqrt()
    a = torch.where(small, 1.0 - theta2 / 6.0, torch.sin(theta) / theta)
    b = torch.where(small, 0.5 - theta2 / 24.0, (1.0 - torch.cos(theta)) / safe2)
    k = skew_t(w)
    eye = torch.eye(3, dtype=w.dtype).expand(k.shape)
    return eye + a[..., None, None] * k + b[..., None, None] * (k @ k)


def params_to_rt(params):
    """``(..., 6)`` pose parameters to ``(R, t)`` tensors."""
    params = as_tensor(params)
    return rotvec_to_matrix_t(params[..., :3]), params[..., 3:]


def pose_to_rt(pose):
    """Accept a :class:`Pose`, an ``(R, t)`` pair or a 6-vector of params."""
    if isinstance(pose, Pose):
        return as_tensor(pose.rotation), as_tensor(pose.translation)
    if isinstance(pose, PoseParams):
        return params_to_rt(pose.as_array())
    if isinstance(pose, (tuple, list)) and len(pose) == 2:
        return as_tensor(pose[0]), as_tensor(pose[1])
    return params_to_rt(pose)


def invert_rt(r, t):
    rt = r.transpose(-1, -2)
    return rt, -(rt @ t[..., None])[..., 0]


def compose_rt(a, b):
    ra, ta = a
    rb, tb = b
    return ra @ rb, (ra @ tb[..., None])[..., 0] + ta
