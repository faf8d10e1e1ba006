"""Triangulation uncertainty of a planar point seen by two 1-D cameras.

A line camera maps a homogeneous plane point ``X = (x, y, 1)`` to the
ratio ``a / b`` of ``(a, b) = P X``.  With Gaussian pixel noise and a
flat prior restricted to points in front of both cameras, the posterior
over ``X`` is the product of the two likelihoods, evaluated on a grid.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GridTooSmall, ProjectionSingular

SINGULAR_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class LineCamera:
    p_matrix: np.ndarray

    def __post_init__(self):
        p = np.array(self.p_matrix, dtype=np.float64).reshape(2, 3)
        if np.linalg.matrix_rank(p) < 2:
            raise ValueError("line camera matrix must have rank 2")
        p.flags.writeable = False
        object.__setattr__(self, "p_matrix", p)

    @classmethod
    def looking_at(cls, center, target, focal=1.0):
        """Camera at ``center`` whose optical axis passes through ``target``."""
        c = np.asarray(center, dtype=np.float64)
        d = np.asarray(target, dtype=np.float64) - c
        d /= np.linalg.norm(d)
        n = np.array([d[1], -d[0]])             # image axis, perpendicular to the optical axis
        return cls(np.array([[focal * n[0], focal * n[1], -focal * n @ c],
                             [d[0], d[1], -d @ c]]))

    def homogeneous(self, x):
        x = np.asarray(x, dtype=np.float64)
        return x @ self.p_matrix[:, :2].T + self.p_matrix[:, 2]

    def depth(self, x):
        return self.homogeneous(x)[..., 1]

    def project(self, x):
        h = self.homogeneous(x)
        if np.any(np.abs(h[..., 1]) <= SINGULAR_TOL):
            raise ProjectionSingular("point lies on the camera's focal line")
        return h[..., 0] / h[..., 1]

    def jacobian(self, x):
        """``d project / d x`` at a single point, shape ``(2,)``."""
        a, b = self.homogeneous(x)
        pa, pb = self.p_matrix[0, :2], self.p_matrix[1, :2]
        return (pa * b - pb * a) / b ** 2


def observe(cam, x, sigma, seed, size=None):
    """Projection of ``x`` plus ``N(0, sigma^2)`` noise; ``size`` draws several."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    p = cam.project(x)
    noise = np.random.default_rng(seed).normal(0.0, 1.0, size=size)
    return p + sigma * noise


@dataclass(frozen=True)
class GridSpec:
    xmin: float
    xmax: float
    ymin: float
    ymax: float
    nx: int = 512
    ny: int = 512

    def __post_init__(self):
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise ValueError("grid extent must be positive")
        if self.nx < 2 or self.ny < 2:
            raise ValueError("grid needs at least 2 cells per axis")

    @classmethod
    def around(cls, center, half_x, half_y, nx=512, ny=512):
        cx, cy = center
        return cls(cx - half_x, cx + half_x, cy - half_y, cy + half_y, nx, ny)

    def centers(self):
        dx = (self.xmax - self.xmin) / self.nx
        dy = (self.ymax - self.ymin) / self.ny
        xs = self.xmin + dx * (np.arange(self.nx) + 0.5)
        ys = self.ymin + dy * (np.arange(self.ny) + 0.5)
        return xs, ys, dx * dy


@dataclass
class PosteriorGrid:
    xs: np.ndarray
    ys: np.ndarray
    density: np.ndarray                          # (ny, nx)
    cell_area: float

    def total(self):
        return float(self.density.sum() * self.cell_area)

    def _weights(self):
        return self.density * self.cell_area

    def mean(self):
        w = self._weights()
        return np.array([(w.sum(0) * self.xs).sum(), (w.sum(1) * self.ys).sum()])

    def covariance(self):
        w = self._weights()
        m = self.mean()
        gx, gy = np.meshgrid(self.xs - m[0], self.ys - m[1])
        return np.array([[(w * gx * gx).sum(), (w * gx * gy).sum()],
                         [(w * gx * gy).sum(), (w * gy * gy).sum()]])

    def largest_eigenvalue(self):
        return float(np.linalg.eigvalsh(self.covariance())[-1])

    def mode(self):
        i, j = np.unravel_index(np.argmax(self.density), self.density.shape)
        return np.array([self.xs[j], self.ys[i]])

    def cell_size(self):
        return float(self.xs[1] - self.xs[0]), float(self.ys[1] - self.ys[0])


def posterior(cams, obs, sigma, grid, check_boundary=True, boundary_ratio=1e-6):
    """Normalized grid posterior of the point given one observation per camera."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    xs, ys, area = grid.centers()
    pts = np.stack(np.meshgrid(xs, ys), -1)
    loglik = np.zeros(pts.shape[:2])
    visible = np.ones(pts.shape[:2], dtype=bool)
    for cam, p in zip(cams, obs, strict=True):
        h = cam.homogeneous(pts)
        front = h[..., 1] > SINGULAR_TOL
        visible &= front
        proj = h[..., 0] / np.where(front, h[..., 1], 1.0)
        loglik -= 0.5 * ((proj - p) / sigma) ** 2
    if not visible.any():
        raise GridTooSmall("no grid cell lies in front of every camera")
    loglik = np.where(visible, loglik, -np.inf)
    dens = np.exp(loglik - loglik.max())
    dens /= dens.sum() * area
    post = PosteriorGrid(xs, ys, dens, area)
    if check_boundary:
        edge = max(dens[0].max(), dens[-1].max(), dens[:, 0].max(), dens[:, -1].max())
        if edge >= boundary_ratio * dens.max():
            raise GridTooSmall(f"boundary density is {edge / dens.max():.3g} of the peak")
    return post


def symmetric_pair(angle_deg, radius=1.0, target=(0.0, 1.0)):
    """Two cameras at distance ``radius`` from ``target`` whose rays meet at ``angle_deg``."""
    if not 0 < angle_deg <= 180:
        raise ValueError("intersection angle must lie in (0, 180] degrees")
    x0 = np.asarray(target, dtype=np.float64)
    half = np.deg2rad(angle_deg) / 2
    cams = []
    for sgn in (-1.0, 1.0):
        c = x0 + radius * np.array([np.sin(sgn * half), -np.cos(half)])
        cams.append(LineCamera.looking_at(c, x0))
    return cams


def laplace_covariance(cams, x, sigma):
    """Gaussian approximation of the posterior at ``x`` from the projection Jacobians."""
    j = np.stack([c.jacobian(x) for c in cams]) / sigma
    return np.linalg.inv(j.T @ j)


def uncertainty_vs_baseline(angles_deg, sigma=1e-3, radius=1.0, cells=512, extent_sd=8.0):
    """Largest posterior covariance eigenvalue per ray-intersection angle.

    Observations are the exact projections of the target, so each value
    reflects geometry alone.  Each grid spans ``extent_sd`` Laplace
    standard deviations per axis around the target.
    """
    x0 = np.array([0.0, 1.0])
    rows = []
    for a in angles_deg:
        if not 0 < a <= 90:
            raise ValueError("angles must lie in (0, 90] degrees")
        cams = symmetric_pair(a, radius, x0)
        cov = laplace_covariance(cams, x0, sigma)
        sd = np.sqrt(np.diag(cov))
        grid = GridSpec.around(x0, extent_sd * sd[0], extent_sd * sd[1], cells, cells)
        post = posterior(cams, [c.project(x0) for c in cams], sigma, grid)
        rows.append((float(a), post.largest_eigenvalue()))
    return rows
