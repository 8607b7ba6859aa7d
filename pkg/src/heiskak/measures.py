"""Discrete measures built from weighted Euclidean balls.

A family stores ball masses, not densities: ball ``B`` carries mass
``weight_B`` spread uniformly over a Euclidean ball of radius
``radius`` (``delta**2`` unless stated otherwise).  Vertical projections of a
family are estimated by quasi-Monte Carlo deposition onto a chart grid of the
vertical plane.
"""

import io
import math
import os
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import qmc

from .hgroup import Affine, Angle, koranyi_dist, koranyi_norm, project_chart
from .parallel import ordered_map


class FamilyError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class WeightedBallFamily:
    delta: float
    centers: np.ndarray
    weights: np.ndarray
    radius: float

    def __post_init__(self):
        self.centers.setflags(write=False)
        self.weights.setflags(write=False)

    def __len__(self):
        return len(self.weights)

    @property
    def mass(self):
        return float(np.sum(self.weights))

    @property
    def ball_volume(self):
        return 4.0 / 3.0 * math.pi * self.radius**3

    def subset(self, index, radius=None):
        index = np.asarray(index)
        return WeightedBallFamily(
            self.delta,
            self.centers[index].copy(),
            self.weights[index].copy(),
            self.radius if radius is None else radius,
        )


def make_family(
    centers,
    weights,
    delta,
    radius=None,
    normalize=True,
    check_disjoint=True,
    check_support=True,
):
    """Validate and build a :class:`WeightedBallFamily`.

    Raises
    ------
    FamilyError
        On non-positive weights, overlapping balls (the first offending pair is
        named) or centers outside the unit Koranyi ball.
    """
    centers = np.array(centers, dtype=float).reshape(-1, 3)
    weights = np.array(weights, dtype=float).reshape(-1)
    if len(centers) != len(weights):
        raise FamilyError(f"{len(centers)} centers but {len(weights)} weights")
    if len(centers) == 0:
        raise FamilyError("a family needs at least one ball")
    if not np.all(np.isfinite(centers)):
        raise FamilyError("centers must be finite")
    if not delta > 0:
        raise FamilyError(f"delta must be positive, got {delta}")
    bad = np.flatnonzero(~(weights > 0))
    if bad.size:
        raise FamilyError(f"weight of ball {bad[0]} is {weights[bad[0]]}; weights must be positive")
    radius = float(delta) ** 2 if radius is None else float(radius)
    if normalize:
        weights = weights / weights.sum()
    if check_support:
        norms = koranyi_norm(centers)
        out = np.flatnonzero(norms > 1.0 + 1e-12)
        if out.size:
            raise FamilyError(
                f"center {out[0]} has Koranyi norm {norms[out[0]]:.6g} > 1"
            )
    if check_disjoint and len(centers) > 1:
        pair = _first_overlap(centers, radius)
        if pair is not None:
            i, j, d = pair
            raise FamilyError(
                f"balls {i} and {j} overlap: center distance {d:.6g} < {2 * radius:.6g}"
            )
    return WeightedBallFamily(float(delta), centers, weights, radius)


def _first_overlap(centers, radius):
    pairs = cKDTree(centers).query_pairs(2.0 * radius, output_type="ndarray")
    if len(pairs) == 0:
        return None
    d = np.linalg.norm(centers[pairs[:, 0]] - centers[pairs[:, 1]], axis=1)
    bad = np.flatnonzero(d < 2.0 * radius * (1.0 - 1e-12))
    if bad.size == 0:
        return None
    order = np.lexsort((pairs[bad, 1], pairs[bad, 0]))
    k = bad[order[0]]
    return int(pairs[k, 0]), int(pairs[k, 1]), float(d[k])


def transform_family(nu, affine, delta=None, radius=None):
    """Apply ``affine`` to the centers only; balls stay Euclidean balls."""
    return WeightedBallFamily(
        nu.delta if delta is None else delta,
        affine(nu.centers),
        nu.weights.copy(),
        nu.radius if radius is None else radius,
    )


# ---------------------------------------------------------------- Frostman


@dataclass(frozen=True)
class FrostmanReport:
    t_exponent: float
    delta_floor: float
    value: float
    argmax_ball: tuple
    probes: int = 0


def frostman_radii(r_floor):
    radii = []
    r = float(r_floor)
    while r <= 2.0 * (1 + 1e-12):
        radii.append(r)
        r *= 2.0
    if not radii or abs(radii[-1] - 2.0) > 1e-12:
        radii.append(2.0)
    return np.array(radii)


def frostman_const(nu, t, r_floor, pair_budget=4_000_000):
    """Sampled lower bound for ``sup mu(B(x, r)) / r**t`` over ``r >= r_floor``.

    Balls are probed at family centers with radii ``r_floor * 2**k <= 2`` and
    at ``r = 2``.  A ball counts toward ``B(x, r)`` when its center does.  When
    the number of candidate pairs at some radius exceeds ``pair_budget`` only
    an evenly strided subset of centers is probed at that radius.
    """
    if not t > 0:
        raise ValueError("t must be positive")
    if not 0 < r_floor:
        raise ValueError("r_floor must be positive")
    centers = nu.centers
    weights = nu.weights
    n = len(weights)
    total = float(weights.sum())
    zmax = float(np.max(np.hypot(centers[:, 0], centers[:, 1])))
    best = (-math.inf, None, None)
    probes = 0
    for r in frostman_radii(r_floor):
        if best[1] is not None and total / r**t <= best[0]:
            # even the whole mass cannot beat the current ratio
            continue
        probe = np.arange(n)
        # |dt| <= r^2/4 + |x_z| r / 2 inside B_H(x, r); rescale t so a cube query bounds it
        t_reach = 0.25 * r * r + 0.5 * r * zmax
        scale = np.array([1.0, 1.0, r / t_reach])
        pts = centers * scale
        tree = cKDTree(pts)
        reach = r * (1 + 1e-9)
        # estimate the pair count from an evenly strided pilot set
        pilot = probe[:: max(1, n // 512)]
        est = tree.count_neighbors(cKDTree(pts[pilot]), reach, p=np.inf) * n / len(pilot)
        if est > pair_budget:
            probe = probe[:: int(math.ceil(est / pair_budget))]
        pairs = cKDTree(pts[probe]).sparse_distance_matrix(
            tree, reach, p=np.inf, output_type="ndarray"
        )
        i = pairs["i"]
        j = pairs["j"]
        keep = koranyi_dist(centers[j], centers[probe[i]]) <= r
        mass = np.bincount(i[keep], weights=weights[j[keep]], minlength=len(probe))
        ratio = mass / r**t
        k = int(np.argmax(ratio))
        probes += len(probe)
        if ratio[k] > best[0]:
            best = (float(ratio[k]), centers[probe[k]].copy(), float(r))
    return FrostmanReport(float(t), float(r_floor), best[0], (best[1], best[2]), probes)


# ------------------------------------------------------ pushforward densities


@dataclass(frozen=True, eq=False)
class PlaneDensity:
    """Gridded density on a vertical plane in chart coordinates ``(mu, s)``.

    ``grid[i, j]`` is the average density over the cell whose lower corner is
    ``origin + (i * cell_size[0], j * cell_size[1])``.
    """

    theta: Angle
    grid: np.ndarray
    cell_size: tuple
    origin: tuple = (0.0, 0.0)

    @property
    def cell_area(self):
        return self.cell_size[0] * self.cell_size[1]

    @property
    def total(self):
        return float(self.grid.sum() * self.cell_area)

    def cell_centers(self):
        mu = self.origin[0] + (np.arange(self.grid.shape[0]) + 0.5) * self.cell_size[0]
        s = self.origin[1] + (np.arange(self.grid.shape[1]) + 0.5) * self.cell_size[1]
        return mu, s


def lq_norm(d, q):
    """``||density||_q^q`` as a Riemann sum over the chart grid."""
    if not q >= 1:
        raise ValueError("q must be >= 1")
    g = d.grid
    return float(np.sum(g**q) * d.cell_area)


def _as_cell(cell):
    if np.ndim(cell) == 0:
        cell = (float(cell), float(cell))
    cell = (float(cell[0]), float(cell[1]))
    if not (cell[0] > 0 and cell[1] > 0):
        raise ValueError("cell sizes must be positive")
    return cell


def effective_samples(n_mc):
    """Samples per ball actually used: ``n_mc`` rounded up to a power of two."""
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    return 1 << max(0, int(math.ceil(math.log2(n_mc))))


def unit_ball_points(n_mc, seed=0):
    """Scrambled Sobol points mapped to the unit ball (volume-preserving map)."""
    n = effective_samples(n_mc)
    u = qmc.Sobol(3, scramble=True, seed=np.random.default_rng([seed, 0x5EED])).random_base2(
        int(math.log2(n))
    )
    return u


def _cube_to_ball(u):
    r = np.cbrt(u[..., 0])
    cos_phi = 1.0 - 2.0 * u[..., 1]
    sin_phi = np.sqrt(np.maximum(0.0, 1.0 - cos_phi * cos_phi))
    psi = 2.0 * math.pi * u[..., 2]
    return np.stack([r * sin_phi * np.cos(psi), r * sin_phi * np.sin(psi), r * cos_phi], axis=-1)


class BallSampler:
    """Deterministic per-ball quasi-random samples of a family.

    Every ball receives the same Sobol net shifted modulo 1 by its own
    Cranley-Patterson offset drawn from ``seed``, so samples of ball ``k`` do
    not depend on how balls are chunked.
    """

    def __init__(self, nu, n_mc, seed=0, affine=None, chunk_points=2_000_000):
        self.nu = nu
        self.base = unit_ball_points(n_mc, seed)
        self.n_mc = len(self.base)
        self.shifts = np.random.default_rng([seed, 0xBA11]).random((len(nu), 3))
        self.affine = affine
        self.chunk = max(1, chunk_points // self.n_mc)
        self._cache = None
        if len(nu) * self.n_mc <= 4_000_000:
            self._cache = list(self._generate())

    def _generate(self):
        nu = self.nu
        for lo in range(0, len(nu), self.chunk):
            hi = min(len(nu), lo + self.chunk)
            u = np.mod(self.base[None, :, :] + self.shifts[lo:hi, None, :], 1.0)
            pts = nu.centers[lo:hi, None, :] + nu.radius * _cube_to_ball(u)
            pts = pts.reshape(-1, 3)
            if self.affine is not None:
                pts = self.affine(pts)
            w = np.repeat(nu.weights[lo:hi] / self.n_mc, self.n_mc)
            yield pts, w

    def __iter__(self):
        if self._cache is not None:
            return iter(self._cache)
        return self._generate()


def projected_bounds(centers, radius, theta):
    """Chart bounding box of the projections of Euclidean balls."""
    mu, s = project_chart(theta, centers)
    c, sn = math.cos(theta), math.sin(theta)
    lam = centers[:, 0] * c + centers[:, 1] * sn
    # |grad s| <= sqrt(1 + (lam^2 + mu^2)/4) over the ball
    slope = np.sqrt(1.0 + ((np.abs(lam) + radius) ** 2 + (np.abs(mu) + radius) ** 2) / 4.0)
    ds = radius * slope
    return (
        float(np.min(mu - radius)),
        float(np.max(mu + radius)),
        float(np.min(s - ds)),
        float(np.max(s + ds)),
    )


def _enclosing(nu, affine):
    if affine is None:
        return nu.centers, nu.radius
    stretch = float(np.linalg.norm(affine.matrix, 2))
    return affine(nu.centers), nu.radius * stretch


def chart_grid(bounds, cell, max_cells=60_000_000):
    mu_lo, mu_hi, s_lo, s_hi = bounds
    cmu, cs = cell
    mu0 = math.floor(mu_lo / cmu) * cmu
    s0 = math.floor(s_lo / cs) * cs
    n_mu = int(math.ceil((mu_hi - mu0) / cmu)) + 1
    n_s = int(math.ceil((s_hi - s0) / cs)) + 1
    if n_mu * n_s > max_cells:
        raise ValueError(
            f"chart grid of {n_mu} x {n_s} cells exceeds {max_cells}; use a coarser cell"
        )
    return (mu0, s0), (n_mu, n_s)


def pushforward_density(nu, theta, cell, n_mc, seed=0, affine=None, sampler=None):
    """Projection of ``nu`` (optionally pushed through ``affine``) onto the plane at ``theta``.

    Each ball deposits ``weight / n_mc`` per quasi-random sample into the chart
    cell containing the sample's projection; the density is mass per cell area.
    """
    theta = Angle(theta)
    cell = _as_cell(cell)
    if sampler is None:
        sampler = BallSampler(nu, n_mc, seed, affine)
    centers, radius = _enclosing(nu, sampler.affine)
    origin, shape = chart_grid(projected_bounds(centers, radius, theta), cell)
    acc = np.zeros(shape[0] * shape[1])
    for pts, w in sampler:
        mu, s = project_chart(theta, pts)
        i = np.floor((mu - origin[0]) / cell[0]).astype(np.int64)
        j = np.floor((s - origin[1]) / cell[1]).astype(np.int64)
        if i.min() < 0 or j.min() < 0 or i.max() >= shape[0] or j.max() >= shape[1]:
            raise RuntimeError("projected sample fell outside the chart grid")
        acc += np.bincount(i * shape[1] + j, weights=w, minlength=acc.size)
    grid = acc.reshape(shape) / (cell[0] * cell[1])
    return PlaneDensity(theta, grid, cell, origin)


def theta_nodes(theta_lo, theta_hi, n_theta):
    if n_theta < 2:
        raise ValueError("n_theta must be >= 2")
    if not theta_hi > theta_lo:
        raise ValueError("theta_hi must exceed theta_lo")
    nodes = np.linspace(theta_lo, theta_hi, n_theta)
    weights = np.full(n_theta, (theta_hi - theta_lo) / (n_theta - 1))
    weights[[0, -1]] *= 0.5
    return nodes, weights


def sector_energy(
    nu,
    q,
    theta_lo=0.0,
    theta_hi=math.pi,
    n_theta=64,
    cell=None,
    n_mc=256,
    seed=0,
    affine=None,
    per_theta=False,
):
    """Trapezoid rule in theta of ``lq_norm(pushforward_density(nu, theta), q)``.

    ``cell`` defaults to ``delta**2 / 2``.  Nodes that coincide
    modulo pi (the two ends of the full range) are evaluated once.  With
    ``per_theta=True`` the per-node values are returned as well.
    """
    if not q >= 1:
        raise ValueError("q must be >= 1")
    if cell is None:
        cell = nu.delta**2 / 2.0
    nodes, weights = theta_nodes(theta_lo, theta_hi, n_theta)
    sampler = BallSampler(nu, n_mc, seed, affine)
    keys = [float(Angle(th)) for th in nodes]
    unique = sorted(set(keys))

    def one(th):
        return lq_norm(pushforward_density(nu, th, cell, n_mc, sampler=sampler), q)

    values = dict(zip(unique, ordered_map(one, unique)))
    vals = np.array([values[k] for k in keys])
    energy = float(np.dot(weights, vals))
    if per_theta:
        return energy, nodes, vals
    return energy


# ------------------------------------------------------------ serialization


def write_family(nu, target):
    """Write ``delta=<value>`` then one ``x y t weight`` line per ball."""
    lines = [f"delta={nu.delta!r}"]
    if abs(nu.radius - nu.delta**2) > 1e-15 * max(1.0, nu.radius):
        lines.append(f"radius={nu.radius!r}")
    for (x, y, t), w in zip(nu.centers.tolist(), nu.weights.tolist()):
        lines.append(f"{x!r} {y!r} {t!r} {w!r}")
    text = "\n".join(lines) + "\n"
    if isinstance(target, (str, os.PathLike)):
        with open(target, "w") as fh:
            fh.write(text)
    else:
        target.write(text)
    return text


def parse_family(text, **kwargs):
    delta = None
    radius = None
    rows = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" in line:
            key, _, value = line.partition("=")
            key = key.strip()
            try:
                val = float(value)
            except ValueError:
                raise FamilyError(f"line {lineno}: bad value {value.strip()!r}") from None
            if key == "delta":
                delta = val
            elif key == "radius":
                radius = val
            else:
                raise FamilyError(f"line {lineno}: unknown header {key!r}")
            continue
        parts = line.split()
        if len(parts) != 4:
            raise FamilyError(f"line {lineno}: expected 'x y t weight', got {raw!r}")
        try:
            rows.append([float(v) for v in parts])
        except ValueError:
            raise FamilyError(f"line {lineno}: non-numeric entry in {raw!r}") from None
    if delta is None:
        raise FamilyError("missing 'delta=' header")
    if not rows:
        raise FamilyError("no balls in measure file")
    arr = np.array(rows)
    return make_family(arr[:, :3], arr[:, 3], delta, radius=radius, **kwargs)


def read_family(source, **kwargs):
    if isinstance(source, (str, os.PathLike)):
        with open(source) as fh:
            return parse_family(fh.read(), **kwargs)
    return parse_family(source.read(), **kwargs)


def density_to_csv(d, target=None):
    """CSV rows ``mu,s,density`` at cell centers."""
    mu, s = d.cell_centers()
    out = io.StringIO() if target is None else target
    out.write("mu,s,density\n")
    for i, m in enumerate(mu):
        for j, sv in enumerate(s):
            out.write(f"{m:.12g},{sv:.12g},{d.grid[i, j]:.12g}\n")
    if target is None:
        return out.getvalue()
    return None
