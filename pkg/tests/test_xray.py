import io
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from heiskak.duality import HorizontalLine, Line3
from heiskak.hgroup import group_mul, horizontal_point, koranyi_dist, plane_chart_inv
from heiskak.measures import WeightedBallFamily, make_family
from heiskak.xray import (
    LineSampler,
    chord_length,
    h_energy,
    horizontal_chart_lines,
    koranyi_length_factor,
    sampled_xray_density,
    translation_invariance_check,
    write_abc_csv,
    write_h_csv,
    xray_h,
    xray_identity_check,
    xray_L3_comparison,
    xray_transform,
)


@pytest.fixture
def cluster():
    c = [[0.0, 0.0, 0.0], [0.3, -0.2, 0.05], [-0.25, 0.1, -0.1], [0.1, 0.4, 0.02]]
    return make_family(c, [1.0, 2.0, 0.5, 1.5], 0.2)


def test_chord_examples():
    line = Line3.through([0, 0, 0], [1, 0, 0])
    assert chord_length(line, [0.5, 0, 0], 0.2) == pytest.approx(0.4)
    assert chord_length(line, [0.5, 0.2, 0], 0.2) == 0.0
    assert chord_length(line, [0.5, 0.1, 0], 0.2) == pytest.approx(0.2 * math.sqrt(3))
    assert chord_length(line, [0.5, 0.3, 0], 0.2) == 0.0


@given(d=st.floats(0, 0.3), r=st.floats(0.01, 0.3))
def test_chord_continuous_and_zero_at_tangency(d, r):
    line = Line3.through([0, 0, 0], [0, 1, 1])
    center = np.array([d, 0.0, 0.0])
    got = chord_length(line, center, r)
    assert got == pytest.approx(2 * math.sqrt(max(r * r - d * d, 0.0)), abs=1e-12)
    if d >= r:
        assert got == 0.0


def test_chord_accepts_horizontal_line():
    line = HorizontalLine(0.5, 0.1, -0.2)
    p = line.points(0.3)
    assert chord_length(line, p, 0.05) == pytest.approx(0.1)


def test_xray_single_ball_through_center():
    nu = make_family([[0.2, 0.1, 0.0]], [1.0], 0.2)
    line = Line3.through(nu.centers[0], [1, 2, 3])
    assert xray_transform(nu, line) == pytest.approx(2 * nu.radius / nu.ball_volume)


def test_xray_missing_line_is_zero(cluster):
    assert xray_transform(cluster, Line3.through([5, 5, 5], [1, 0, 0])) == 0.0


def test_xray_matches_tube_count(rng):
    """Mass of a thin tube around the line over its cross-section area."""
    nu = make_family([[0.0, 0.0, 0.0], [0.03, 0.04, 0.0]], [1.0, 3.0], 0.15)
    line = HorizontalLine(0.7, 0.01, 0.0)
    n = 2_000_000
    estimates = []
    for rho0 in (0.004, 0.002):
        hit = 0.0
        for c, w in zip(nu.centers, nu.weights):
            v = rng.standard_normal((n, 3))
            v *= (nu.radius * rng.uniform(0, 1, n) ** (1 / 3) / np.linalg.norm(v, axis=1))[:, None]
            hit += w * np.mean(line.as_line3().distance(c + v) <= rho0)
        estimates.append(hit / (math.pi * rho0**2))
    exact = xray_transform(nu, line)
    assert estimates[-1] == pytest.approx(exact, rel=0.02)


def test_koranyi_length_factor_from_metric():
    """Ratio of Koranyi to Euclidean length of a short step along ``w * V_theta``."""
    theta, h = 0.8, 1e-6
    for mu in (-1.5, 0.0, 0.4, 2.0):
        w = plane_chart_inv(theta, mu, 0.3)
        p0 = group_mul(w, horizontal_point(theta, 0.2))
        p1 = group_mul(w, horizontal_point(theta, 0.2 + h))
        ratio = koranyi_dist(p1, p0) / np.linalg.norm(p1 - p0)
        assert float(koranyi_length_factor(mu)) == pytest.approx(ratio, rel=1e-6)


def test_chart_lines_are_horizontal_translates():
    theta = 1.1
    anchor, direction = horizontal_chart_lines(theta, 0.4, -0.2)
    w = plane_chart_inv(theta, 0.4, -0.2)
    p = group_mul(w, horizontal_point(theta, 0.7))
    assert np.allclose(anchor + 0.7 * direction, p)


@pytest.mark.parametrize("theta", [0.0, 1.0, 2.5])
def test_fubini_mass_per_angle(cluster, theta):
    # Koranyi length times plane area is the volume element, so X_H integrates to the mass
    sampler = LineSampler("h", cluster.radius / 8, n_theta=2, theta_lo=theta, theta_hi=theta + 1e-9)
    _, _, mu, s = next(sampler.h_slices(cluster))
    total = float(np.sum(xray_h(cluster, theta, mu, s))) * sampler.cell**2
    assert total == pytest.approx(cluster.mass, rel=0.01)


def test_identity_q1_is_pi_mass(cluster):
    c = xray_identity_check(cluster, 1.0)
    assert c.lhs == pytest.approx(math.pi * cluster.mass, rel=1e-9)
    assert c.rhs == pytest.approx(math.pi * cluster.mass, rel=0.01)


def test_identity_single_ball_q2():
    nu = make_family([[0.1, -0.2, 0.05]], [1.0], 0.25)
    assert 0.9 <= xray_identity_check(nu, 2.0).ratio <= 1.1


@pytest.mark.slow
def test_identity_converges_on_random_family(rng):
    from heiskak.suites import random_ball_points

    while True:
        try:
            nu = make_family(random_ball_points(rng, 50) * 0.9, rng.uniform(0.2, 1.0, 50), 0.15)
            break
        except ValueError:
            continue
    coarse = xray_identity_check(nu, 1.5, cell=nu.radius / 3, n_mc=4096)
    fine = xray_identity_check(nu, 1.5, cell=nu.radius / 6, n_mc=16384)
    assert abs(fine.ratio - 1) < abs(coarse.ratio - 1)
    assert abs(fine.ratio - 1) < 0.1


def test_identity_rejects_small_q(cluster):
    with pytest.raises(ValueError):
        xray_identity_check(cluster, 0.5)


def test_L3_zero_measure():
    empty = WeightedBallFamily(0.1, np.zeros((0, 3)), np.zeros(0), 0.01)
    assert xray_L3_comparison(empty, 1.5, math.pi / 4) == (0.0, 0.0)


def test_L3_single_ball_ratio_and_stability():
    nu = make_family([[0.1, 0.2, -0.05]], [1.0], 0.25)
    a = xray_L3_comparison(nu, 1.5, math.pi / 4, cell=nu.radius / 4, n_mc=4096, n_a=24)
    b = xray_L3_comparison(nu, 1.5, math.pi / 4, n_theta=33, cell=nu.radius / 8, n_mc=16384, n_a=48)
    assert 1 / 8 <= a.ratio <= 8
    assert b.ratio == pytest.approx(a.ratio, rel=0.1)


def test_L3_rejects_bad_epsilon(cluster):
    with pytest.raises(ValueError):
        xray_L3_comparison(cluster, 1.5, 0.0)


@given(eps=st.floats(0.05, 1.5))
def test_abc_lines_respect_angle_window(eps):
    nu = make_family([[0.0, 0.0, 0.0]], [1.0], 0.3)
    for a, _, _, _ in LineSampler("abc", 0.05, epsilon=eps, n_a=6).abc_slices(nu):
        theta = HorizontalLine(a, 0.0, 0.0).theta
        assert eps - 1e-12 <= theta <= math.pi - eps + 1e-12


def test_abc_grid_covers_support(cluster):
    """Lines on the border of each (b, c) slice miss every ball."""
    from heiskak.duality import horizontal_line_arrays
    from heiskak.xray import _xray_arrays

    for a, _, b, c in LineSampler("abc", cluster.radius / 2, n_a=8).abc_slices(cluster):
        p = np.stack([np.full_like(b, a), b, c], axis=-1)
        x = _xray_arrays(cluster, *horizontal_line_arrays(p)).reshape(b.shape)
        assert x[0].max() == x[-1].max() == x[:, 0].max() == x[:, -1].max() == 0.0


def test_line_sampler_validation():
    with pytest.raises(ValueError):
        LineSampler("xyz", 0.1)
    with pytest.raises(ValueError):
        LineSampler("h", 0.0)
    with pytest.raises(ValueError):
        LineSampler("abc", 0.1, epsilon=2.0)


def test_translation_by_identity_is_exact(cluster):
    c = translation_invariance_check(cluster, [0, 0, 0], 1.5, n_mc=1024)
    assert c.lhs == c.rhs


@pytest.mark.parametrize("p", [(0.0, 0.0, 0.3), (0.2, 0.1, 0.0)])
def test_translation_invariance(cluster, p):
    c = translation_invariance_check(cluster, p, 1.5, cell=cluster.radius / 3, n_mc=4096)
    assert abs(c.lhs - c.rhs) / c.lhs < 0.02


def test_h_energy_translation_invariant(cluster):
    """The line-measure side is invariant too, computed on translated centers."""
    from heiskak.measures import WeightedBallFamily

    moved = WeightedBallFamily(
        cluster.delta, group_mul([0.1, -0.2, 0.1], cluster.centers), cluster.weights.copy(), cluster.radius
    )
    sampler = LineSampler("h", cluster.radius / 4)
    a, b = h_energy(cluster, 1.5, sampler), h_energy(moved, 1.5, sampler)
    assert b == pytest.approx(a, rel=0.02)


def test_sampled_density_tracks_xray(cluster):
    d, x = sampled_xray_density(cluster, 0.6, cluster.radius / 4, n_mc=65536)
    assert x.shape == d.grid.shape
    assert np.corrcoef(d.grid.ravel(), x.ravel())[0, 1] > 0.95


def test_csv_headers(cluster):
    buf = io.StringIO()
    write_h_csv(cluster, LineSampler("h", cluster.radius, n_theta=2), buf)
    assert buf.getvalue().startswith("theta,w_mu,w_s,xray_value\n")
    buf = io.StringIO()
    write_abc_csv(cluster, LineSampler("abc", cluster.radius, n_a=2), buf)
    rows = buf.getvalue().splitlines()
    assert rows[0] == "a,b,c,xray_value"
    assert all(len(r.split(",")) == 4 for r in rows[1:])
