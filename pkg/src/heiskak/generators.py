"""Test measures with controlled Koranyi dimension.

``heisenberg_cantor`` builds self-similar families from maps
``p -> q_i * D_r(p)``.  With a Koranyi-ball hull the translates must be
``2r``-separated inside ``B(0, 1 - r)``, which caps the number of pieces far
below what dimension above 3 needs at ``r = 1/3`` (greedy packing finds about
ten).  The default hull is therefore the box ``|x|, |y| <= 1, |t| <= c``,
whose images under the maps are sheared boxes that can be stacked in ``t``;
the attractor is conjugated by a dilation to sit inside ``B(0, 1)``.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .duality import dual_point_line
from .hgroup import dilate, group_mul, koranyi_dist, koranyi_norm
from .measures import FamilyError, make_family


@dataclass(frozen=True, eq=False)
class IFSSpec:
    """Maps ``p -> translates[i] * D_r(p)`` acting on a hull.

    ``hull`` is ``"box"`` (half-height ``t_half`` in ``t``) or ``"ball"`` (the
    unit Koranyi ball).  Construction checks that every image of the hull lies
    in the hull and that images have pairwise disjoint interiors.
    """

    r: float
    translates: np.ndarray
    depth: int
    hull: str = "box"
    t_half: float = 2.0
    _checked: bool = field(default=False, repr=False)

    def __post_init__(self):
        if not 0 < self.r < 1:
            raise FamilyError(f"contraction must lie in (0, 1), got {self.r}")
        if self.depth < 0:
            raise FamilyError("depth must be non-negative")
        if self.hull not in ("box", "ball"):
            raise FamilyError(f"unknown hull {self.hull!r}")
        tr = np.asarray(self.translates, dtype=float).reshape(-1, 3)
        object.__setattr__(self, "translates", tr)
        if self.similarity_dimension > 4 + 1e-12:
            raise FamilyError(
                f"similarity dimension {self.similarity_dimension:.4f} exceeds 4"
            )
        _check_contained(self)
        pair = _first_collision(self)
        if pair is not None:
            raise FamilyError(f"images of translates {pair[0]} and {pair[1]} overlap")

    @property
    def n_maps(self):
        return len(self.translates)

    @property
    def similarity_dimension(self):
        n = len(self.translates)
        return 0.0 if n <= 1 else math.log(n) / math.log(1.0 / self.r)

    @property
    def hull_radius(self):
        """Largest Koranyi norm of a hull point."""
        if self.hull == "ball":
            return 1.0
        return (4.0 + 16.0 * self.t_half**2) ** 0.25


def _shear_reach(r, q):
    # t-offset of q * D_r(p) beyond q_t + r^2 p_t, over |p_x|, |p_y| <= 1
    return 0.5 * r * (abs(q[0]) + abs(q[1]))


def _check_contained(spec):
    r = spec.r
    for k, q in enumerate(spec.translates):
        if spec.hull == "ball":
            ok = koranyi_norm(q) + r <= 1.0 + 1e-12
        else:
            ok = (
                abs(q[0]) + r <= 1 + 1e-12
                and abs(q[1]) + r <= 1 + 1e-12
                and abs(q[2]) + r * r * spec.t_half + _shear_reach(r, q) <= spec.t_half + 1e-12
            )
        if not ok:
            raise FamilyError(f"image of the hull under translate {k} leaves the hull")


def _first_collision(spec):
    tr = spec.translates
    r = spec.r
    for i in range(len(tr)):
        for j in range(i + 1, len(tr)):
            if spec.hull == "ball":
                # disjoint Koranyi balls of radius r need separation 2r
                if koranyi_dist(tr[i], tr[j]) < 2 * r * (1 - 1e-12):
                    return i, j
                continue
            dx = abs(tr[i, 0] - tr[j, 0])
            dy = abs(tr[i, 1] - tr[j, 1])
            if dx >= 2 * r * (1 - 1e-12) or dy >= 2 * r * (1 - 1e-12):
                continue
            if dx > 1e-12 or dy > 1e-12:
                return i, j
            # same column: the shear is common, only the t-stacking matters
            if abs(tr[i, 2] - tr[j, 2]) < 2 * r * r * spec.t_half * (1 - 1e-12):
                return i, j
    return None


def box_lattice_translates(r=1.0 / 3.0, t_half=2.0):
    """All translates of the column-and-stack lattice for the box hull."""
    m = int(math.floor(1.0 / r + 1e-9))
    xs = -1.0 + r + 2.0 * r * np.arange(m)
    xs = xs - xs.mean()
    spacing = 2.0 * r * r * t_half
    out = []
    for qx in xs:
        for qy in xs:
            limit = t_half - r * r * t_half - _shear_reach(r, (qx, qy))
            if limit < 0:
                continue
            n = int(math.floor(2 * limit / spacing + 1e-9)) + 1
            for j in range(n):
                out.append((qx, qy, (j - 0.5 * (n - 1)) * spacing))
    return np.array(out)


def greedy_farthest(candidates, n, seed=0):
    """Pick ``n`` candidates by farthest-point insertion under the Koranyi metric."""
    candidates = np.asarray(candidates, dtype=float)
    if n > len(candidates):
        raise FamilyError(f"only {len(candidates)} candidate translates, asked for {n}")
    rng = np.random.default_rng(seed)
    first = int(rng.integers(len(candidates)))
    chosen = [first]
    md = koranyi_dist(candidates, candidates[first])
    md[first] = -1.0
    while len(chosen) < n:
        k = int(np.argmax(md))
        chosen.append(k)
        md = np.minimum(md, koranyi_dist(candidates, candidates[k]))
        md[chosen] = -1.0
    return candidates[np.array(chosen)]


def cantor_spec(n_maps=41, r=1.0 / 3.0, depth=2, seed=0, t_half=2.0):
    """Box-hull spec with ``n_maps`` translates chosen greedily from the lattice."""
    cands = box_lattice_translates(r, t_half)
    return IFSSpec(r, greedy_farthest(cands, n_maps, seed), depth, "box", t_half)


def ball_packing_spec(n_maps, r, depth, seed=0, n_candidates=50_000):
    """Ball-hull spec: translates greedily packed in ``B(0, 1 - r)`` with separation ``2r``."""
    rng = np.random.default_rng(seed)
    reach = 1.0 - r
    cands = rng.uniform([-reach, -reach, -reach**2 / 4], [reach, reach, reach**2 / 4], (n_candidates, 3))
    cands = cands[koranyi_norm(cands) <= reach]
    chosen = [np.zeros(3)] if n_maps == 1 else []
    if n_maps > 1:
        picked = greedy_farthest(cands, 1, seed)
        chosen = [picked[0]]
        md = koranyi_dist(cands, chosen[0])
        while len(chosen) < n_maps:
            k = int(np.argmax(md))
            if md[k] < 2 * r:
                raise FamilyError(
                    f"could only pack {len(chosen)} translates at separation {2 * r:.4g}"
                )
            chosen.append(cands[k])
            md = np.minimum(md, koranyi_dist(cands, cands[k]))
    return IFSSpec(r, np.array(chosen), depth, "ball")


def heisenberg_cantor(spec, seed=None):
    """Equal-weight family at the depth-``spec.depth`` images of the origin.

    The attractor is conjugated by ``D_s`` with ``s = 1 / hull_radius`` so it
    lies in ``B(0, 1)``; the scale is ``delta = s * r**depth``.  ``seed`` is
    accepted for interface symmetry; construction is deterministic.
    """
    s = (1.0 - 1e-12) / spec.hull_radius
    tr = dilate(s, spec.translates)
    pts = np.zeros((1, 3))
    for _ in range(spec.depth):
        shrunk = dilate(spec.r, pts)
        pts = np.concatenate([group_mul(q, shrunk) for q in tr])
    delta = s * spec.r**spec.depth
    return make_family(pts, np.ones(len(pts)), delta)


def _lattice(delta, with_x=True):
    step_t = 2.0 * delta * delta
    n_xy = int(math.floor(1.0 / delta))
    n_t = int(math.floor(0.25 / step_t))
    xy = delta * np.arange(-n_xy, n_xy + 1)
    ts = step_t * np.arange(-n_t, n_t + 1)
    xs = xy if with_x else np.zeros(1)
    g = np.stack(np.meshgrid(xs, xy, ts, indexing="ij"), axis=-1).reshape(-1, 3)
    return g[koranyi_norm(g) <= 1.0]


def vertical_plane_sample(n=None, delta=0.125):
    """Balls on the vertical plane ``x = 0``: a Koranyi delta-net of its unit disc.

    Spacing is ``delta`` in ``y`` and ``2 delta**2`` in ``t`` (just enough for
    disjoint Euclidean ``delta**2`` balls).  If ``n`` is given, an evenly
    strided subset of ``n`` net points is used.
    """
    pts = _lattice(delta, with_x=False)
    if n is not None:
        if n < 1:
            raise FamilyError("n must be positive")
        idx = np.unique(np.linspace(0, len(pts) - 1, min(n, len(pts))).round().astype(int))
        pts = pts[idx]
    return make_family(pts, np.ones(len(pts)), delta)


def uniform_solid(delta):
    """Equal weights on the lattice ``(i delta, j delta, 2 k delta**2)`` inside ``B(0, 1)``."""
    pts = _lattice(delta)
    return make_family(pts, np.ones(len(pts)), delta)


def horizontal_fan(x0=(0.0, 0.0, 0.0), n=5, spread=0.8, delta=0.1):
    """``n`` equal balls centered on the horizontal line ``ell(x0)``.

    Every center ``c`` satisfies ``x0 in dual_line(c)``, so all dual tubes
    pass through ``x0`` with directions ``u(s)`` for ``n`` evenly spaced
    ``s in [-spread, spread]``.  With five or more well separated directions
    no plane holds half of them and points near ``x0`` are broad.
    """
    if n < 1:
        raise FamilyError("n must be positive")
    s = np.linspace(-spread, spread, n) if n > 1 else np.zeros(1)
    pts = dual_point_line(x0).points(s)
    return make_family(pts, np.ones(n), delta)
