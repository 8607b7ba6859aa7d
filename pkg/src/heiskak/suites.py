"""Numerical checks of the group, duality, tube, X-ray and rescaling facts.

Each suite returns a list of :class:`Check` rows.  A row passes when
``value <= bound``; ``tol_scale`` multiplies every bound, so ``tol_scale=0``
makes any check with a nonzero defect fail.
"""

import math
from typing import NamedTuple

import numpy as np

from .duality import dual_line, incidence_check, tube_constant_probe, tube_inclusion_bound
from .hgroup import (
    dilate,
    group_inv,
    group_mul,
    koranyi_dist,
    koranyi_norm,
    vertical_decompose,
    vertical_projection,
)
from .incidence import cell_measure, conjugation_energy
from .measures import make_family
from .xray import translation_invariance_check, xray_identity_check, xray_L3_comparison


class Check(NamedTuple):
    suite: str
    name: str
    value: float
    bound: float

    @property
    def passed(self):
        return bool(self.value <= self.bound)


def random_ball_points(rng, n):
    """Points of the unit Koranyi ball, by rejection from its bounding box."""
    out = []
    while sum(len(o) for o in out) < n:
        p = rng.uniform([-1, -1, -0.5], [1, 1, 0.5], (2 * n, 3))
        out.append(p[koranyi_norm(p) <= 1.0])
    return np.concatenate(out)[:n]


def _rel(a, b):
    return np.abs(a - b) / np.maximum(1.0, np.abs(b))


def group_suite(rng, n=100_000, tol_scale=1.0):
    p, q, r = (rng.uniform(-2, 2, (n, 3)) for _ in range(3))
    lam = rng.uniform(0.1, 10.0, n)
    thetas = rng.uniform(0, math.pi, 100)
    assoc = np.max(_rel(group_mul(group_mul(p, q), r), group_mul(p, group_mul(q, r))))
    left = np.max(_rel(koranyi_dist(group_mul(r, p), group_mul(r, q)), koranyi_dist(p, q)))
    homog = np.max(_rel(koranyi_norm(dilate(lam, p)), lam * koranyi_norm(p)))
    recon = 0.0
    for th, chunk in zip(thetas, np.array_split(p, len(thetas))):
        w, v = vertical_decompose(th, chunk)
        recon = max(recon, float(np.max(np.abs(group_mul(w, v) - chunk))))
    inv = np.max(np.abs(group_mul(p, group_inv(p))))
    tol = 1e-12 * tol_scale
    return [
        Check("group", "associativity", float(assoc), tol),
        Check("group", "left_invariance", float(left), tol),
        Check("group", "dilation_homogeneity", float(homog), tol),
        Check("group", "decomposition_reconstruction", float(recon), tol),
        Check("group", "inverse", float(inv), tol),
    ]


def duality_suite(rng, n=10_000, tol=1e-9, tol_scale=1.0):
    """Constructed incidences must be detected by both routes, random pairs by neither.

    Values count disagreements, so the bound is ``0`` scaled by ``tol_scale``
    plus a half to allow exact equality at scale one.
    """
    p_star = random_ball_points(rng, n)
    lam = rng.uniform(-5, 5, n)
    p = dual_line(p_star).point_at(lam)
    a, b = incidence_check(p, p_star, tol)
    miss_pos = int(np.sum(~a) + np.sum(~b))
    r1 = rng.uniform(-1, 1, (n, 3))
    r2 = random_ball_points(rng, n)
    a, b = incidence_check(r1, r2, tol)
    hit_neg = int(np.sum(a) + np.sum(b))
    bound = 0.5 * tol_scale
    return [
        Check("duality", "missed_positives", float(miss_pos), bound),
        Check("duality", "false_negatives_detected", float(hit_neg), bound),
    ]


def tube_suite(rng, n_points=100, deltas=(1e-1, 1e-2, 1e-3), n_samples=2000, tol_scale=1.0):
    """Largest ``C1`` against 100 and largest ``C2`` against its Lipschitz bound."""
    pts = random_ball_points(rng, n_points)
    c1s, c2s = [], []
    for delta in deltas:
        for p in pts:
            c1, c2 = tube_constant_probe(p, delta, n_samples, rng)
            c1s.append(c1)
            c2s.append(c2)
    bound2 = max(tube_inclusion_bound(d) for d in deltas)
    return [
        Check("tube", "C1_max", float(max(c1s)), 100.0 * tol_scale),
        Check("tube", "C2_max", float(max(c2s)), bound2 * tol_scale),
    ]


def lemma_measures(seed=0, n=10):
    """A varied suite of small families: single balls, clusters and scattered balls."""
    rng = np.random.default_rng(seed)
    out = [make_family([[0.0, 0.0, 0.0]], [1.0], 0.25)]
    if n > 1:
        out.append(make_family([[0.3, -0.2, 0.1]], [2.0], 0.2, normalize=False))
    while len(out) < n:
        k = int(rng.integers(2, 11))
        delta = float(rng.choice([0.25, 0.2]))
        while True:
            c = random_ball_points(rng, k) * 0.9
            try:
                out.append(make_family(c, rng.uniform(0.2, 1.0, k), delta, normalize=bool(len(out) % 2)))
                break
            except ValueError:
                continue
    return out


def xray_suite(measures, qs=(1.0, 1.5, 2.0), n_theta=17, n_mc=16384, cell_div=6.0, seed=0, tol_scale=1.0):
    checks = []
    for m, nu in enumerate(measures):
        for q in qs:
            c = xray_identity_check(nu, q, n_theta, nu.radius / cell_div, n_mc, seed)
            checks.append(Check("xray", f"identity_m{m}_q{q:g}", abs(c.ratio - 1.0), 0.1 * tol_scale))
            if q == 1.0:
                dev = abs(c.lhs / (math.pi * nu.mass) - 1.0)
                checks.append(Check("xray", f"mass_m{m}", dev, 0.01 * tol_scale))
    return checks


def xray_sector_suite(measures, q=1.5, epsilon=math.pi / 4, n_theta=17, n_mc=16384, cell_div=6.0, seed=0, tol_scale=1.0):
    """``log8 |log(ratio)| <= 1`` means the ratio lies in ``[1/8, 8]``."""
    checks = []
    for m, nu in enumerate(measures):
        c = xray_L3_comparison(nu, q, epsilon, n_theta, nu.radius / cell_div, n_mc, seed=seed)
        checks.append(Check("xray_sector", f"ratio_m{m}", abs(math.log(c.ratio)) / math.log(8), tol_scale))
    return checks


def translation_suite(measures, rng, n_translations=5, q=1.5, n_theta=17, n_mc=4096, seed=0, tol_scale=1.0):
    checks = []
    for m, nu in enumerate(measures):
        for k, p in enumerate(random_ball_points(rng, n_translations)):
            c = translation_invariance_check(nu, p, q, n_theta, nu.radius / 3.0, n_mc, seed)
            checks.append(
                Check("translation", f"m{m}_p{k}", abs(c.lhs - c.rhs) / c.lhs, 0.02 * tol_scale)
            )
    return checks


def conjugation_pointwise(rng, n=100_000, rho=0.125):
    """``max |P(p) - D_r P(D_{1/r} p)|`` over ``r = rho`` and random ``r`` in ``(0, 1)``."""
    p = rng.uniform(-2, 2, (n, 3))
    rhos = np.concatenate([[rho], rng.uniform(0.01, 1.0, 99)])
    worst = 0.0
    for r, th, chunk in zip(rhos, rng.uniform(0, math.pi, 100), np.array_split(p, 100)):
        direct = vertical_projection(th, chunk)
        conj = dilate(r, vertical_projection(th, dilate(1.0 / r, chunk)))
        worst = max(worst, float(np.max(np.abs(direct - conj))))
    return worst


def conjugation_suite(rng, measures, rho=0.125, q=1.5, n_theta=17, n_mc=4096, seed=0, tol_scale=1.0):
    checks = [Check("conjugation", "pointwise", conjugation_pointwise(rng, rho=rho), 1e-12 * tol_scale)]
    for m, nu in enumerate(measures):
        cell = cell_measure(nu, np.arange(len(nu)))
        e1, e2 = conjugation_energy(cell, rho, q, n_theta=n_theta, n_mc=n_mc, seed=seed)
        predicted = rho ** (-3 * (q - 1)) * e2
        checks.append(Check("conjugation", f"energy_factor_m{m}", abs(predicted / e1 - 1.0), 0.05 * tol_scale))
    return checks
