"""Point-line duality between the Heisenberg group and R^3.

A point ``(x, y, t)`` of the group is sent to a Euclidean line ``dual_line``
in R^3 whose direction sits on the cone ``eta_2^2 = 2 eta_1 eta_3``; a point
``(a, b, c)`` of R^3 is sent to the horizontal line
``s -> (a s + b, s, c + b s / 2)``.  A point lies on the dual line of another
exactly when the second lies on the horizontal line of the first, which is
what makes tube membership an O(1) line-ball distance test.
"""

import math
from dataclasses import dataclass

import numpy as np

from .hgroup import Angle, as_points, group_mul, horizontal_point, plane_chart, vertical_decompose


@dataclass(frozen=True)
class Line3:
    anchor: np.ndarray
    direction: np.ndarray

    @classmethod
    def through(cls, anchor, direction):
        anchor = np.asarray(anchor, dtype=float)
        direction = np.asarray(direction, dtype=float)
        return cls(anchor, direction / np.linalg.norm(direction))

    def point_at(self, lam):
        lam = np.asarray(lam, dtype=float)
        return self.anchor + lam[..., None] * self.direction

    def distance(self, points):
        return line_point_distance(self.anchor, self.direction, points)


def line_point_distance(anchor, direction, points):
    """Euclidean distance from ``points`` to the line(s) ``anchor + R direction``.

    ``direction`` need not be normalized; all arguments broadcast.
    """
    diff = np.asarray(points, dtype=float) - anchor
    cross = np.cross(diff, direction)
    return np.linalg.norm(cross, axis=-1) / np.linalg.norm(direction, axis=-1)


def cone_form(v):
    v = np.asarray(v, dtype=float)
    return v[..., 1] ** 2 - 2.0 * v[..., 0] * v[..., 2]


def dual_direction(y, normalize=True):
    y = np.asarray(y, dtype=float)
    d = np.stack([np.ones_like(y), -y, 0.5 * y * y], axis=-1)
    if normalize:
        # |(1, -y, y^2/2)| = 1 + y^2/2 exactly
        d = d / (1.0 + 0.5 * y * y)[..., None]
    return d


def dual_anchor(p_star):
    p = as_points(p_star)
    x, y, t = p[..., 0], p[..., 1], p[..., 2]
    return np.stack([np.zeros_like(x), x, t - 0.5 * x * y], axis=-1)


def dual_line(p_star):
    p = as_points(p_star)
    return Line3(dual_anchor(p), dual_direction(p[..., 1]))


@dataclass(frozen=True)
class HorizontalLine:
    """The horizontal line ``s -> (a s + b, s, c + b s / 2)``."""

    a: float
    b: float
    c: float

    @property
    def theta(self):
        return Angle(math.atan2(1.0, self.a))

    @property
    def w(self):
        """Intersection with the vertical plane orthogonal to the line's direction."""
        return vertical_decompose(self.theta, self.points(0.0))[0]

    @property
    def chart(self):
        mu, s = plane_chart(self.theta, self.w)
        return float(mu), float(s)

    def points(self, s):
        s = np.asarray(s, dtype=float)
        return np.stack([self.a * s + self.b, s, self.c + 0.5 * self.b * s], axis=-1)

    def as_line3(self):
        return Line3.through([self.b, 0.0, self.c], [self.a, 1.0, 0.5 * self.b])

    @classmethod
    def from_theta_w(cls, theta, w):
        """Rebuild ``(a, b, c)`` from ``w * V_theta``; fails for lines parallel to the x-axis."""
        theta = Angle(theta)
        st = math.sin(theta)
        if abs(st) < 1e-12:
            raise ValueError("lines with theta = 0 have no (a, b, c) parameters")
        w = as_points(w)
        lam = -w[1] / st
        p0 = group_mul(w, horizontal_point(theta, lam))
        return cls(math.cos(theta) / st, float(p0[0]), float(p0[2]))


def dual_point_line(p):
    a, b, c = as_points(p)
    return HorizontalLine(float(a), float(b), float(c))


def horizontal_line_arrays(p):
    """Anchor ``(b, 0, c)`` and unnormalized direction ``(a, 1, b/2)`` of ``ell(p)``."""
    p = np.asarray(p, dtype=float)
    a, b, c = p[..., 0], p[..., 1], p[..., 2]
    anchor = np.stack([b, np.zeros_like(b), c], axis=-1)
    direction = np.stack([a, np.ones_like(a), 0.5 * b], axis=-1)
    return anchor, direction


def preimage_distance(x, center):
    """Distance from ``center`` to the horizontal line of ``x``.

    By duality this is the Euclidean distance from ``center`` to the set of
    group points whose dual lines pass through ``x``.
    """
    anchor, direction = horizontal_line_arrays(x)
    return line_point_distance(anchor, direction, center)


def incidence_check(p, p_star, tol):
    """Return ``(p on dual_line(p_star), p_star on horizontal line of p)``."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    p = as_points(p)
    p_star = as_points(p_star)
    line = dual_line(p_star)
    first = line_point_distance(line.anchor, line.direction, p) <= tol
    second = preimage_distance(p, p_star) <= tol
    return first, second


def dual_tube_membership(x, center, radius):
    """Is ``x`` in the dual tube of the Euclidean ball, clipped to the unit ball?"""
    if not radius > 0:
        raise ValueError("ball radius must be positive")
    x = np.asarray(x, dtype=float)
    inside = np.linalg.norm(x, axis=-1) <= 1.0
    return inside & (preimage_distance(x, center) <= radius)


def _sphere_directions(n, rng):
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _line_ball_chord(anchor, direction, radius):
    """Parameter interval of ``anchor + lam * direction`` inside ``B(0, radius)``."""
    a2 = np.sum(direction * direction, axis=-1)
    b = np.sum(anchor * direction, axis=-1)
    c = np.sum(anchor * anchor, axis=-1) - radius * radius
    disc = np.maximum(b * b - a2 * c, 0.0)
    root = np.sqrt(disc)
    return (-b - root) / a2, (-b + root) / a2


def tube_constant_probe(p_star, delta, n_samples, rng=None, box=100.0):
    """Empirical constants for the two tube inclusions at scale ``delta``.

    ``C1`` is the largest ratio ``dist(p_star, ell(x)) / delta`` over points
    ``x`` in the delta-neighbourhood of ``dual_line(p_star)``: by duality this
    is the smallest radius (in units of delta) of a ball around ``p_star``
    whose dual tube reaches ``x``.  ``C2`` is the largest distance, in units
    of delta, from ``dual_line(p_star)`` to a point of the dual tube of the
    delta-ball around ``p_star`` inside ``B_E(0, box)``.
    """
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    rng = np.random.default_rng(rng)
    p_star = as_points(p_star)
    line = dual_line(p_star)
    # Only points within B_E(0, box) are probed.
    lo, hi = _line_ball_chord(line.anchor, line.direction, box)
    lam = rng.uniform(lo, hi, n_samples)
    lam[:2] = lo, hi
    xi = delta * _sphere_directions(n_samples, rng)
    x = line.point_at(lam) + xi
    c1 = float(np.max(preimage_distance(x, p_star)) / delta)

    q = p_star + delta * _sphere_directions(n_samples, rng)
    anchors = dual_anchor(q)
    dirs = dual_direction(q[:, 1], normalize=False)
    lo, hi = _line_ball_chord(anchors, dirs, box)
    # the far ends of each chord are where the direction error is largest
    frac = rng.uniform(0.0, 1.0, n_samples)
    frac[: n_samples // 3] = 0.0
    frac[n_samples // 3 : 2 * n_samples // 3] = 1.0
    lam_q = lo + frac * (hi - lo)
    pts = anchors + lam_q[:, None] * dirs
    c2 = float(np.max(line.distance(pts)) / delta)
    return c1, c2


def tube_inclusion_bound(delta, box=100.0):
    """Lipschitz bound on ``C2`` for points of the unit Koranyi ball.

    For ``|x|, |y| <= 1`` the anchor map moves by at most
    ``(3 + delta/2) delta`` and the unnormalized direction by at most
    ``(2 + delta/2) delta``; along ``B_E(0, box)`` the line parameter is at
    most ``box`` because the first coordinate of a dual line is the parameter.
    """
    return (3.0 + 0.5 * delta) + box * (2.0 + 0.5 * delta)
