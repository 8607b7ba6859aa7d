import math

import numpy as np
import pytest

from scipy.spatial import cKDTree

from heiskak.duality import incidence_check
from heiskak.generators import (
    IFSSpec,
    ball_packing_spec,
    box_lattice_translates,
    cantor_spec,
    greedy_farthest,
    heisenberg_cantor,
    horizontal_fan,
    uniform_solid,
    vertical_plane_sample,
)
from heiskak.hgroup import koranyi_dist, koranyi_norm, project_chart
from heiskak.measures import FamilyError, frostman_const


def assert_valid_family(nu):
    assert nu.mass == pytest.approx(1.0)
    assert np.all(nu.weights > 0)
    assert np.all(koranyi_norm(nu.centers) <= 1.0 + 1e-12)
    if len(nu) > 1:
        d, _ = cKDTree(nu.centers).query(nu.centers, k=2)
        assert d[:, 1].min() >= 2 * nu.radius * (1 - 1e-9)


def test_single_map_is_point_mass():
    spec = IFSSpec(0.5, [[0, 0, 0]], depth=3)
    assert spec.similarity_dimension == 0.0
    nu = heisenberg_cantor(spec)
    assert len(nu) == 1


def test_cantor_dimension_above_three():
    spec = cantor_spec(depth=1)
    assert spec.n_maps == 41
    assert spec.similarity_dimension == pytest.approx(math.log(41) / math.log(3))
    assert spec.similarity_dimension > 3


@pytest.mark.parametrize("depth", [1, 2])
def test_cantor_family_valid(depth):
    nu = heisenberg_cantor(cantor_spec(depth=depth))
    assert len(nu) == 41**depth
    assert_valid_family(nu)


def test_cantor_deterministic():
    a = heisenberg_cantor(cantor_spec(depth=2, seed=4))
    b = heisenberg_cantor(cantor_spec(depth=2, seed=4))
    assert np.array_equal(a.centers, b.centers)


def test_cantor_frostman_self_similar():
    values = []
    for depth in (1, 2):
        spec = cantor_spec(depth=depth)
        nu = heisenberg_cantor(spec)
        values.append(frostman_const(nu, spec.similarity_dimension, nu.delta).value)
    assert 0.25 <= values[1] / values[0] <= 4


@pytest.mark.slow
def test_cantor_frostman_self_similar_depth3():
    spec = cantor_spec(depth=3)
    nu = heisenberg_cantor(spec)
    v3 = frostman_const(nu, spec.similarity_dimension, nu.delta).value
    spec2 = cantor_spec(depth=2)
    nu2 = heisenberg_cantor(spec2)
    v2 = frostman_const(nu2, spec2.similarity_dimension, nu2.delta).value
    assert 0.25 <= v3 / v2 <= 4


def test_box_lattice_images_disjoint():
    tr = box_lattice_translates()
    assert len(tr) >= 41
    IFSSpec(1 / 3, tr, depth=1)


def test_collision_names_pair():
    tr = [[0.0, 0.0, 0.0], [0.1, 0.0, 0.0]]
    with pytest.raises(FamilyError, match="translates 0 and 1 overlap"):
        IFSSpec(1 / 3, tr, depth=1)


def test_containment_checked():
    with pytest.raises(FamilyError, match="leaves the hull"):
        IFSSpec(1 / 3, [[0.9, 0.0, 0.0]], depth=1)


@pytest.mark.parametrize(
    "kwargs, match",
    [
        (dict(r=1.5), "contraction"),
        (dict(depth=-1), "depth"),
        (dict(hull="cone"), "hull"),
    ],
)
def test_spec_validation(kwargs, match):
    base = dict(r=1 / 3, translates=[[0, 0, 0]], depth=1)
    base.update(kwargs)
    with pytest.raises(FamilyError, match=match):
        IFSSpec(**base)


def test_dimension_above_four_rejected():
    # 17 maps at ratio 1/2 have dimension log2(17) > 4
    with pytest.raises(FamilyError, match="exceeds 4"):
        IFSSpec(0.5, np.zeros((17, 3)), depth=1)


def test_ball_hull_packing():
    spec = ball_packing_spec(6, 0.2, depth=2)
    tr = spec.translates
    d = koranyi_dist(tr[:, None], tr[None])
    np.fill_diagonal(d, np.inf)
    assert d.min() >= 0.4
    assert_valid_family(heisenberg_cantor(spec))


def test_ball_hull_packing_fails_loudly():
    with pytest.raises(FamilyError, match="could only pack"):
        ball_packing_spec(41, 1 / 3, depth=1, n_candidates=5000)


def test_greedy_farthest_spreads_points():
    cands = np.random.default_rng(0).uniform(-1, 1, (500, 3))
    picked = greedy_farthest(cands, 8, seed=1)
    d = koranyi_dist(picked[:, None], picked[None])
    np.fill_diagonal(d, np.inf)
    assert d.min() > 0.5


def test_vertical_plane_on_plane():
    nu = vertical_plane_sample(delta=0.125)
    assert np.all(nu.centers[:, 0] == 0)
    assert_valid_family(nu)
    assert len(vertical_plane_sample(50, 0.125)) == 50


def test_vertical_plane_frostman_blows_up():
    values = [frostman_const(vertical_plane_sample(delta=d), 3.5, d).value for d in (1 / 8, 1 / 32)]
    assert values[1] / values[0] >= 4**0.4


def test_vertical_plane_degenerate_projection():
    centers = vertical_plane_sample(delta=0.125).centers
    # at theta = pi/2 every center projects onto the line mu = 0
    mu, s = project_chart(math.pi / 2, centers)
    assert np.abs(mu).max() < 1e-15
    # at theta = 0 the projection fixes the plane and keeps centers distinct
    mu, s = project_chart(0.0, centers)
    assert len(np.unique(np.round(np.stack([mu, s], 1), 12), axis=0)) == len(centers)


@pytest.mark.parametrize("delta", [1 / 4, 1 / 8, 1 / 16])
def test_uniform_count_scaling(delta):
    nu = uniform_solid(delta)
    assert 1 / 8 <= len(nu) * delta**4 <= 8
    assert_valid_family(nu)


def test_uniform_frostman_bounded():
    values = [frostman_const(uniform_solid(d), 4.0, d).value for d in (1 / 4, 1 / 8, 1 / 16)]
    assert max(values) <= 2 * min(values)


def test_fan_is_incident():
    x0 = np.array([0.1, -0.2, 0.05])
    nu = horizontal_fan(x0, n=5, spread=0.6, delta=0.1)
    assert len(nu) == 5
    a, b = incidence_check(np.broadcast_to(x0, nu.centers.shape), nu.centers, 1e-12)
    assert a.all() and b.all()
