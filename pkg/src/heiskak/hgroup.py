"""Heisenberg group arithmetic, the Koranyi gauge and vertical projections.

Points are stored as float arrays whose last axis holds ``(x, y, t)``; every
function broadcasts over leading axes so the same code serves single points
and point clouds.
"""

import math
from typing import NamedTuple

import numpy as np


class HPoint(NamedTuple):
    x: float
    y: float
    t: float


class Angle(float):
    """An angle in radians reduced into ``[0, pi)``."""

    def __new__(cls, theta):
        theta = float(theta)
        if not math.isfinite(theta):
            raise ValueError(f"angle must be finite, got {theta}")
        reduced = math.fmod(theta, math.pi)
        if reduced < 0:
            reduced += math.pi
        # fmod can land on pi itself after the shift
        if reduced >= math.pi:
            reduced = 0.0
        return super().__new__(cls, reduced)


def as_points(p):
    arr = np.asarray(p, dtype=float)
    if arr.shape[-1:] != (3,):
        raise ValueError(f"expected trailing dimension 3, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("Heisenberg points must have finite coordinates")
    return arr


def group_mul(p, q):
    p = as_points(p)
    q = as_points(q)
    x, y, t = p[..., 0], p[..., 1], p[..., 2]
    u, v, tau = q[..., 0], q[..., 1], q[..., 2]
    return np.stack([x + u, y + v, t + tau + 0.5 * (x * v - y * u)], axis=-1)


def group_inv(p):
    return -as_points(p)


def koranyi_norm(p):
    p = as_points(p)
    r2 = p[..., 0] ** 2 + p[..., 1] ** 2
    return (r2 * r2 + 16.0 * p[..., 2] ** 2) ** 0.25


def koranyi_dist(p, q):
    """Left-invariant Koranyi distance ``|q^{-1} * p|``."""
    p = as_points(p)
    q = as_points(q)
    dx = p[..., 0] - q[..., 0]
    dy = p[..., 1] - q[..., 1]
    # t-coordinate of q^{-1} * p, expanded to avoid building the product
    dt = p[..., 2] - q[..., 2] - 0.5 * (q[..., 0] * p[..., 1] - q[..., 1] * p[..., 0])
    r2 = dx * dx + dy * dy
    return (r2 * r2 + 16.0 * dt * dt) ** 0.25


def dilate(lam, p):
    """``D_lam``; ``lam`` may be an array broadcasting against ``p[..., 0]``."""
    lam = np.asarray(lam, dtype=float)
    if not np.all(lam > 0):
        raise ValueError(f"dilation factor must be positive, got {lam}")
    p = as_points(p)
    lam = lam[..., None]
    return p * np.concatenate(np.broadcast_arrays(lam, lam, lam * lam), axis=-1)


def _unit(theta):
    theta = float(Angle(theta))
    return math.cos(theta), math.sin(theta)


def vertical_decompose(theta, p):
    """Split ``p = w * v`` with ``w`` in the vertical plane and ``v`` horizontal.

    Returns ``(w, v)`` where ``v = (lam e^{i theta}, 0)`` and ``w`` has no
    component along ``e^{i theta}``.
    """
    c, s = _unit(theta)
    p = as_points(p)
    lam = p[..., 0] * c + p[..., 1] * s
    mu = -p[..., 0] * s + p[..., 1] * c
    w = np.stack([-mu * s, mu * c, p[..., 2] + 0.5 * lam * mu], axis=-1)
    v = np.stack([lam * c, lam * s, np.zeros_like(lam)], axis=-1)
    return w, v


def vertical_projection(theta, p):
    return vertical_decompose(theta, p)[0]


def project_chart(theta, p):
    """Chart coordinates ``(mu, s)`` of the vertical projection of ``p``.

    Same result as ``plane_chart(theta, vertical_projection(theta, p))``
    without the intermediate point.
    """
    c, s = _unit(theta)
    p = np.asarray(p, dtype=float)
    lam = p[..., 0] * c + p[..., 1] * s
    mu = -p[..., 0] * s + p[..., 1] * c
    return mu, p[..., 2] + 0.5 * lam * mu


def plane_chart(theta, w, tol=1e-9):
    """Coordinates ``(mu, s)`` with ``w = (mu i e^{i theta}, s)``.

    Area in the chart equals Euclidean area on the vertical plane.
    """
    c, s = _unit(theta)
    w = as_points(w)
    along = w[..., 0] * c + w[..., 1] * s
    if np.any(np.abs(along) > tol):
        raise ValueError("point does not lie on the vertical plane for this angle")
    mu = -w[..., 0] * s + w[..., 1] * c
    return mu, w[..., 2].copy()


def plane_chart_inv(theta, mu, s_coord):
    c, s = _unit(theta)
    mu = np.asarray(mu, dtype=float)
    s_coord = np.asarray(s_coord, dtype=float)
    mu, s_coord = np.broadcast_arrays(mu, s_coord)
    return np.stack([-mu * s, mu * c, s_coord], axis=-1)


def horizontal_point(theta, lam):
    c, s = _unit(theta)
    lam = np.asarray(lam, dtype=float)
    return np.stack([lam * c, lam * s, np.zeros_like(lam)], axis=-1)


class Affine(NamedTuple):
    """Affine map ``p -> p @ matrix.T + offset`` on R^3."""

    matrix: np.ndarray
    offset: np.ndarray

    def __call__(self, p):
        return np.asarray(p, dtype=float) @ self.matrix.T + self.offset

    def then(self, other):
        """Composite map: apply ``self`` first, then ``other``."""
        return Affine(other.matrix @ self.matrix, other.matrix @ self.offset + other.offset)


def identity_affine():
    return Affine(np.eye(3), np.zeros(3))


def left_translation_affine(p):
    """Left translation ``q -> p * q`` written as an affine map."""
    px, py, pt = as_points(p)
    m = np.eye(3)
    m[2, 0] = -0.5 * py
    m[2, 1] = 0.5 * px
    return Affine(m, np.array([px, py, pt]))


def dilation_affine(lam):
    if not lam > 0:
        raise ValueError(f"dilation factor must be positive, got {lam}")
    return Affine(np.diag([lam, lam, lam * lam]), np.zeros(3))
