"""Command line harness.

Every command writes a ``key = value`` report (echoed to stdout) embedding the
full configuration, the seed and the git blob hash of the input measure
file, plus CSV tables and SVG figures in ``--out``.

Exit codes: 0 success, 2 a tolerance was not met, 3 bad input.
"""

import argparse
import hashlib
import math
import os
import sys

import numpy as np

from . import __version__
from .generators import (
    cantor_spec,
    heisenberg_cantor,
    horizontal_fan,
    uniform_solid,
    vertical_plane_sample,
)
from .incidence import (
    C_OVERLAP,
    cell_measure,
    conjugation_energy,
    energy_decomposition_check,
    rescale_level,
)
from .measures import FamilyError, frostman_const, parse_family, sector_energy, write_family
from .suites import (
    conjugation_suite,
    duality_suite,
    group_suite,
    lemma_measures,
    translation_suite,
    tube_suite,
    xray_sector_suite,
    xray_suite,
)
from .xray import LineSampler, write_abc_csv, write_h_csv

EXIT_OK, EXIT_TOL, EXIT_INPUT = 0, 2, 3

BROAD_LIMIT = 10.0
NARROW_LIMIT = 4.0


class InputError(Exception):
    pass


def git_blob_sha1(data):
    """Hash ``git hash-object`` would print for a file with these bytes."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def load_measure(path, normalize):
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    try:
        nu = parse_family(data.decode("utf-8"), normalize=normalize)
    except (FamilyError, UnicodeDecodeError) as exc:
        raise InputError(f"{path}: {exc}") from None
    return nu, git_blob_sha1(data)


class Report:
    def __init__(self):
        self.sections = []

    def section(self, name, items):
        self.sections.append((name, list(items)))

    def text(self):
        out = []
        for name, items in self.sections:
            out.append(f"[{name}]")
            out += [f"{k} = {_fmt(v)}" for k, v in items]
            out.append("")
        return "\n".join(out)


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.10g}"
    return str(v)


def _config_items(args):
    skip = {"func"}
    return [(k, v) for k, v in sorted(vars(args).items()) if k not in skip]


def _finish(args, report, name):
    text = report.text()
    with open(os.path.join(args.out, f"{name}_report.txt"), "w") as fh:
        fh.write(text)
    sys.stdout.write(text)


def _start(args, measure_sha=None):
    os.makedirs(args.out, exist_ok=True)
    report = Report()
    report.section("run", [("version", __version__)] + _config_items(args))
    if measure_sha is not None:
        report.section("input", [("path", args.measure), ("sha1", measure_sha)])
    return report


# ---------------------------------------------------------------- commands


def cmd_verify_lemmas(args):
    report = _start(args)
    rng = np.random.default_rng(args.seed)
    scale = args.tol_scale
    measures = lemma_measures(args.seed, args.n_measures)
    n_mc = args.n_mc or 16384
    suites = [
        ("group", lambda: group_suite(rng, tol_scale=scale)),
        ("duality", lambda: duality_suite(rng, tol_scale=scale)),
        ("tube", lambda: tube_suite(rng, n_points=args.tube_points, tol_scale=scale)),
        ("xray", lambda: xray_suite(measures, n_theta=args.n_theta or 17, n_mc=n_mc, seed=args.seed, tol_scale=scale)),
        (
            "xray_sector",
            lambda: xray_sector_suite(measures, n_theta=args.n_theta or 17, n_mc=n_mc, seed=args.seed, tol_scale=scale),
        ),
        (
            "translation",
            lambda: translation_suite(
                measures[:3], rng, args.translations, args.q, args.n_theta or 17, seed=args.seed, tol_scale=scale
            ),
        ),
        (
            "conjugation",
            lambda: conjugation_suite(rng, measures[:3], args.rho, args.q, args.n_theta or 17, seed=args.seed, tol_scale=scale),
        ),
    ]
    rows = []
    first_fail = None
    summary = []
    for name, run in suites:
        checks = run()
        rows += checks
        ok = all(c.passed for c in checks)
        summary.append((name, "pass" if ok else "FAIL"))
        if not ok and first_fail is None:
            first_fail = name
    with open(os.path.join(args.out, "lemmas.csv"), "w") as fh:
        fh.write("suite,check,value,bound,passed\n")
        for c in rows:
            fh.write(f"{c.suite},{c.name},{c.value:.12g},{c.bound:.12g},{int(c.passed)}\n")
    report.section("suites", summary)
    report.section("result", [("status", "pass" if first_fail is None else f"fail ({first_fail})")])
    _finish(args, report, "verify_lemmas")
    if first_fail is not None:
        print(f"verify-lemmas: suite {first_fail!r} failed", file=sys.stderr)
        return EXIT_TOL
    return EXIT_OK


def cmd_energy(args):
    nu, sha = load_measure(args.measure, normalize=False)
    report = _start(args, sha)
    energy, nodes, vals = sector_energy(
        nu, args.q, 0.0, math.pi, args.n_theta or 64, args.cell, args.n_mc or 256, args.seed, per_theta=True
    )
    frost = frostman_const(nu, args.t, nu.delta)
    mass = nu.mass
    ratio = energy / (mass * frost.value ** (args.q - 1.0))
    report.section(
        "result",
        [
            ("balls", len(nu)),
            ("delta", nu.delta),
            ("energy", energy),
            ("mass", mass),
            ("frostman_const", frost.value),
            ("frostman_radius", frost.argmax_ball[1]),
            ("ratio", ratio),
            ("energy_over_pi_mass", energy / (math.pi * mass)),
        ],
    )
    with open(os.path.join(args.out, "energy.csv"), "w") as fh:
        fh.write("theta,energy\n")
        for th, v in zip(nodes, vals):
            fh.write(f"{th:.12g},{v:.12g}\n")
    if not args.no_figures:
        from .plotting import energy_figure

        energy_figure(nodes, vals, os.path.join(args.out, "energy.svg"))
    _finish(args, report, "energy")
    return EXIT_OK


def cmd_broad_narrow(args):
    nu, sha = load_measure(args.measure, normalize=True)
    report = _start(args, sha)
    try:
        d = energy_decomposition_check(nu, args.rho, args.q, spacing=args.grid_spacing)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    limit_b = BROAD_LIMIT * args.tol_scale
    limit_n = NARROW_LIMIT * args.tol_scale
    ok = d.max_broad_ratio <= limit_b and d.max_narrow_ratio <= limit_n
    report.section(
        "grid",
        [("spacing", d.spacing), ("points", len(d.points)), ("broad", d.n_broad), ("narrow", d.n_narrow)],
    )
    report.section(
        "parts",
        [
            ("total", d.total_part),
            ("broad", d.broad_part),
            ("narrow", d.narrow_part),
            ("broad_wedge_integral", d.broad_wedge_part),
            ("cap_sum", d.cap_part),
            ("cell_sum", d.cell_part),
        ],
    )
    report.section(
        "constants",
        [
            ("broad_constant", d.broad_constant),
            ("narrow_to_cells", d.narrow_to_cells),
            ("max_broad_ratio", d.max_broad_ratio),
            ("max_narrow_ratio", d.max_narrow_ratio),
            ("broad_limit", limit_b),
            ("narrow_limit", limit_n),
        ],
    )
    report.section(
        "planks",
        [
            ("cells", d.n_cells),
            ("cell_mass_total", d.cell_mass_total),
            ("max_multiplicity", d.max_multiplicity),
            ("uncontained", d.uncontained),
            ("max_cell_spread_over_rho", d.max_cell_spread),
        ],
    )
    report.section("result", [("status", "pass" if ok else "fail")])
    with open(os.path.join(args.out, "broad_narrow.csv"), "w") as fh:
        fh.write("x1 x2 x3 class total_weight wedge_sum\n")
        for row in d.csv_rows():
            fh.write(row + "\n")
    if not args.no_figures:
        from .plotting import broad_narrow_figure

        broad_narrow_figure(d, os.path.join(args.out, "broad_narrow.svg"))
    _finish(args, report, "broad_narrow")
    return EXIT_OK if ok else EXIT_TOL


def cmd_rescale_demo(args):
    nu, sha = load_measure(args.measure, normalize=True)
    report = _start(args, sha)
    c_nu = frostman_const(nu, args.t, nu.delta).value
    reps = rescale_level(nu, args.rho, args.t, c_nu=c_nu)
    heaviest = max(range(len(reps)), key=lambda k: (reps[k].mass, -k))
    key = reps[heaviest].key
    # energy identity on the heaviest cell
    members = _cell_members(nu, args.rho, key)
    cell = cell_measure(nu, members)
    e1, e2 = conjugation_energy(cell, args.rho, args.q, args.n_theta or 17, n_mc=args.n_mc or 1024, seed=args.seed)
    predicted = args.rho ** (-3 * (args.q - 1)) * e2
    conj_err = abs(predicted / e1 - 1.0)
    worst = max(r.ratio for r in reps)
    mass_total = sum(r.mass for r in reps)
    roundtrip = max(r.roundtrip_error for r in reps)
    s = args.tol_scale
    ok = worst <= 1.0 * s and mass_total <= C_OVERLAP * nu.mass * s and roundtrip <= 1e-10 * s and conj_err <= 0.05 * s
    report.section(
        "result",
        [
            ("frostman_const", c_nu),
            ("cells", len(reps)),
            ("max_frostman_ratio", worst),
            ("cell_mass_total", mass_total),
            ("max_roundtrip_error", roundtrip),
            ("max_cell_spread_over_rho", max(r.spread for r in reps)),
            ("heaviest_cell", "/".join(map(str, key))),
            ("energy_translated", e1),
            ("energy_rescaled", e2),
            ("conjugation_relative_error", conj_err),
            ("status", "pass" if ok else "fail"),
        ],
    )
    with open(os.path.join(args.out, "cells.csv"), "w") as fh:
        fh.write("cap,k2,k3,size,mass,spread,frostman_cell,frostman_bound\n")
        for r in reps:
            fh.write(
                f"{r.key[0]},{r.key[1]},{r.key[2]},{r.size},{r.mass:.12g},{r.spread:.12g},"
                f"{r.frostman_cell:.12g},{r.frostman_bound:.12g}\n"
            )
    if not args.no_figures:
        from .plotting import cells_figure

        cells_figure(reps, os.path.join(args.out, "cells.svg"))
    _finish(args, report, "rescale_demo")
    return EXIT_OK if ok else EXIT_TOL


def _cell_members(nu, rho, key):
    from .incidence import cone_cap_cover, plank_cover_and_assign

    caps = cone_cap_cover(rho)
    cover = plank_cover_and_assign(nu, caps[key[0]], rho, caps)
    for plank, members in cover.assignments:
        if plank.key == key:
            return members
    raise KeyError(key)


def cmd_generate(args):
    try:
        if args.kind == "cantor":
            nu = heisenberg_cantor(cantor_spec(args.n_maps, depth=args.depth, seed=args.seed))
        elif args.kind == "uniform":
            nu = uniform_solid(args.delta)
        elif args.kind == "vertical":
            nu = vertical_plane_sample(args.n, args.delta)
        else:
            nu = horizontal_fan(n=args.n or 5, delta=args.delta)
    except (FamilyError, ValueError) as exc:
        raise InputError(str(exc)) from None
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, f"{args.kind}.txt")
    write_family(nu, path)
    print(f"wrote {len(nu)} balls (delta = {nu.delta:.6g}) to {path}")
    return EXIT_OK


def cmd_xray(args):
    nu, sha = load_measure(args.measure, normalize=False)
    report = _start(args, sha)
    cell = args.cell if args.cell else nu.radius / 3.0
    name = f"xray_{args.mode}.csv"
    with open(os.path.join(args.out, name), "w") as fh:
        if args.mode == "h":
            write_h_csv(nu, LineSampler("h", cell, args.n_theta or 17), fh)
        else:
            write_abc_csv(nu, LineSampler("abc", cell), fh)
    report.section("result", [("table", name)])
    _finish(args, report, "xray")
    return EXIT_OK


# ------------------------------------------------------------------ parser


def _common(p, measure=True):
    if measure:
        p.add_argument("measure", help="measure file: 'delta=' header then 'x y t weight' rows")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--q", type=float, default=1.5)
    p.add_argument("--rho", type=float, default=0.125)
    p.add_argument("--t", type=float, default=3.5, help="Frostman exponent")
    p.add_argument("--n-theta", type=int, default=None, help="angle nodes (command default)")
    p.add_argument("--cell", type=float, default=None, help="chart cell size")
    p.add_argument("--n-mc", type=int, default=None, help="quasi-random samples per ball")
    p.add_argument("--tol-scale", type=float, default=1.0, help="multiplies every tolerance")
    p.add_argument("--no-figures", action="store_true", help="skip SVG output")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="heiskak", description="Vertical projections and dual-tube incidences in the Heisenberg group."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify-lemmas", help="run the lemma suites and write lemmas.csv")
    _common(p, measure=False)
    p.add_argument("--n-measures", type=int, default=4)
    p.add_argument("--tube-points", type=int, default=100)
    p.add_argument("--translations", type=int, default=2)
    p.set_defaults(func=cmd_verify_lemmas)

    p = sub.add_parser("energy", help="projection energy against mass and Frostman constant")
    _common(p)
    p.set_defaults(func=cmd_energy)

    p = sub.add_parser("broad-narrow", help="broad/narrow decomposition on a grid of B_E(0, 1)")
    _common(p)
    p.add_argument("--grid-spacing", type=float, default=None, help="default delta**2 / 2")
    p.set_defaults(func=cmd_broad_narrow)

    p = sub.add_parser("rescale-demo", help="one cap -> plank -> cell -> rescale level")
    _common(p)
    p.set_defaults(func=cmd_rescale_demo)

    p = sub.add_parser("generate", help="write a test measure file")
    p.add_argument("kind", choices=["cantor", "uniform", "vertical", "fan"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".")
    p.add_argument("--delta", type=float, default=0.125)
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--n-maps", type=int, default=41)
    p.add_argument("--n", type=int, default=None, help="ball count (vertical, fan)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("xray", help="tabulate the X-ray transform on a line grid")
    _common(p)
    p.add_argument("--mode", choices=["h", "abc"], default="h")
    p.set_defaults(func=cmd_xray)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    for name in ("rho",):
        v = getattr(args, name, None)
        if v is not None and not 0 < v < 1:
            print(f"heiskak: --rho must lie in (0, 1), got {v}", file=sys.stderr)
            return EXIT_INPUT
    try:
        return args.func(args)
    except InputError as exc:
        print(f"heiskak: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
