"""Command-line front end: ``cpwloss {solve,sweep,fit,predict,mesh-dump}``.

Exit codes: 0 success, 2 configuration or input-data error, 3 numerical
failure, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import ParticipationCache, RunConfig
from .errors import (ConfigError, DataError, GeometryError, MeshError, PreconditionError, SolverError)
from .geometry import CpwGeometry, build_cross_section, interpolate_sidewall_angle
from .lossfit import (COLUMNS, X_NAMES, LossFactorDistribution, assemble, monte_carlo_extract, predict_qtls,
                      predicted_vs_measured, to_loss_tangents)
from .mesh import generate_mesh, uniform_refine, write_mesh
from .participation import (LAYER_COMPONENTS, DepthSweepResult, participation_perturbative, saturation_depth,
                            simulate, sweep_geometries)
from .qdata import NonPhysicalPolicy, aggregate_all, parse_measurements
from .solver import solve_electrostatic, standard_permittivities

log = logging.getLogger("cpwloss")

EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 2, 3, 4


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


class Context:
    def __init__(self, args):
        self.args = args
        if args.config is None:
            raise ConfigError("--config is required")
        self.config = RunConfig.load(args.config)
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.cache = ParticipationCache(self.out / "cache", enabled=not args.no_cache)
        self.seed = args.seed
        self.threads = max(1, args.threads)
        (self.out / "run_config.json").write_text(self.config.to_json() + "\n")

    def participations(self, geoms):
        """Perturbative participation per geometry, through the cache."""
        layer_spec = self.config.layer_spec()
        jobs = [(g, layer_spec, self.config.policy(g)) for g in geoms]
        results = [self.cache.get(*j) for j in jobs]
        todo = [i for i, r in enumerate(results) if r is None]
        if todo and self.threads > 1 and len(todo) > 1:
            with ProcessPoolExecutor(max_workers=self.threads) as ex:
                fresh = list(ex.map(_simulate_job, [jobs[i] for i in todo]))
        else:
            fresh = [simulate(*jobs[i]) for i in todo]
        for i, p in zip(todo, fresh):
            self.cache.put(*jobs[i], p)
            results[i] = p
        self.cache.misses += len(todo)
        return results


def _simulate_job(job):
    return simulate(*job)


# --------------------------------------------------------------------------
# solve


def richardson(values, ratio=2.0):
    """Extrapolate the last three values of a sequence refined by ``ratio`` in h.

    Returns ``(limit, order)``; with fewer than three values, or when the
    differences do not shrink, the last value and NaN.
    """
    if len(values) < 3:
        return values[-1], math.nan
    a, b, c = values[-3:]
    d1, d2 = b - a, c - b
    if d1 == 0 or d2 == 0 or d2 / d1 <= 0 or abs(d2) >= abs(d1):
        return c, math.nan
    p = math.log(d1 / d2) / math.log(ratio)
    return c + d2 / (ratio ** p - 1), p


def cmd_solve(ctx: Context):
    cfg = ctx.config
    geom = cfg.geometry(domain_scale=ctx.args.domain_scale)
    policy = cfg.policy(geom)
    perms = standard_permittivities(geom.eps_substrate)
    mesh = generate_mesh(build_cross_section(geom), policy)
    levels = []
    sol = None
    for level in range(ctx.args.levels + 1):
        if level:
            mesh = uniform_refine(mesh)
        sol = solve_electrostatic(mesh, perms)
        levels.append((level, mesh.n_triangles, sol.capacitance))
        print(f"level {level}: {mesh.n_triangles} triangles, C = {sol.capacitance:.6e} F/m")
    c_ext, order = richardson([c for _, _, c in levels])
    print(f"extrapolated C = {c_ext:.6e} F/m (observed order {order:.2f})")
    p = participation_perturbative(sol, cfg.layer_spec(), geometry=geom)
    rows = [("capacitance_F_per_m", sol.capacitance), ("capacitance_extrapolated_F_per_m", c_ext),
            ("u_total_J_per_m", sol.u_total)]
    rows += [(f"energy_{t.name}_J_per_m", e) for t, e in sol.energy_by_region.items()]
    rows += [(k, getattr(p, k)) for k in (*LAYER_COMPONENTS, "p_si", "p_vac")]
    write_csv(ctx.out / "energy.csv", ("quantity", "value"), rows)
    write_csv(ctx.out / "convergence.csv", ("level", "triangles", "capacitance_F_per_m"), levels)
    if ctx.args.dump_field:
        with open(ctx.out / "field.txt", "w") as fh:
            write_mesh(sol.mesh, fh, node_values={"V": sol.potentials},
                       tri_values={"Ex": sol.e_field[:, 0], "Ey": sol.e_field[:, 1]})
    return 0


# --------------------------------------------------------------------------
# sweep


def cmd_sweep(ctx: Context):
    from .plotting import plot_depth_sweep

    cfg = ctx.config
    template = cfg.geometry()
    tol = cfg._num("sweep", "tolerance", 0.01)
    geoms = sweep_geometries(template, cfg.depths())
    results = ctx.participations(geoms)
    depths = [g.d for g in geoms]
    res = DepthSweepResult(depths=depths, participation=results, asymptote=results[-1],
                           saturation_depth=saturation_depth(depths, [p.total for p in results], tol), tolerance=tol)
    cols, rows = res.table()
    write_csv(ctx.out / "sweep.csv", cols, rows)
    plot_depth_sweep(res, ctx.out / "sweep.svg")
    print(f"saturation depth: {res.saturation_depth:.4g} um (total within {tol:.0%} of the deepest point)")
    return 0


# --------------------------------------------------------------------------
# fit


def _record_geometries(records, cfg: RunConfig):
    tmpl = cfg.geometry_template()
    geoms = {}
    for r in records:
        g = CpwGeometry(r.w, r.g, r.d, r.phi, **tmpl)
        if geoms.setdefault(r.geometry_id, g) != g:
            raise DataError(f"geometry '{r.geometry_id}' has inconsistent dimensions across devices")
    return geoms


def cmd_fit(ctx: Context):
    from .plotting import plot_predicted_vs_measured

    cfg = ctx.config
    path = cfg.path("fit", "measurements")
    policy = NonPhysicalPolicy(cfg.section("fit").get("policy", "exclude"))
    iterations = ctx.args.iterations or int(cfg._num("fit", "iterations", 10000))
    rejects = []
    with open(path, newline="", encoding="utf-8") as fh:
        records = parse_measurements(fh, rejects=rejects)
    for r in rejects:
        print(f"warning: {path.name} line {r.line} rejected: {r.reason}", file=sys.stderr)
    if not records:
        raise DataError(f"{path}: no measurement rows")
    stats = aggregate_all(records, policy)
    geoms = _record_geometries(records, cfg)
    ids = list(stats)
    parts = dict(zip(ids, ctx.participations([geoms[i] for i in ids])))
    P = assemble(parts)
    if len(ids) < len(COLUMNS):
        print(f"warning: underdetermined system ({len(ids)} geometries for {len(COLUMNS)} loss factors); "
              "loss-factor ranges span the non-negative solution set", file=sys.stderr)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        dist = monte_carlo_extract(P, [stats[i] for i in ids], iterations=iterations, seed=ctx.seed,
                                   workers=ctx.threads, layer_spec=cfg.layer_spec())
    with open(ctx.out / "loss_factors.csv", "w", newline="") as fh:
        dist.write_csv(fh)

    assume = cfg.assumptions()
    mean = dist.mean
    tan_mean = to_loss_tangents(mean, assume, cfg.layer_spec())
    tan_samples = to_loss_tangents(dist.samples, assume, cfg.layer_spec())
    summary = [("geometries", len(ids)), ("condition_number", P.condition_number)]
    summary += [(f"corr_{k}", v) for k, v in P.collinearity().items()]
    summary += list(dist.summary().items())
    for name, t, col in zip(COLUMNS, tan_mean, tan_samples.T):
        lo, hi = np.percentile(col, [2.5, 97.5])
        summary += [(f"tan_delta_{name}_mean", float(t)), (f"tan_delta_{name}_lo95", float(lo)),
                    (f"tan_delta_{name}_hi95", float(hi))]
    write_csv(ctx.out / "fit_summary.csv", ("quantity", "value"), summary)

    rows, r2 = predicted_vs_measured(P, [stats[i] for i in ids], mean)
    pv_rows = []
    for gid, meas, pred in rows:
        s = stats[gid]
        band = predict_qtls(parts[gid], dist, gid)
        pv_rows.append((gid, s.n, meas, s.ci95_lo, s.ci95_hi, pred, band.ci95_lo, band.ci95_hi))
    write_csv(ctx.out / "predicted_vs_measured.csv",
              ("geometry_id", "n", "measured_qtls", "measured_lo95", "measured_hi95", "predicted_qtls",
               "predicted_lo95", "predicted_hi95"), pv_rows)
    plot_predicted_vs_measured(rows, ctx.out / "predicted_vs_measured.svg", [stats[i] for i in ids])

    print(f"{len(records)} devices, {len(ids)} geometries, condition number {P.condition_number:.3g}")
    print(f"{'region':<6} {'x mean':>11} {'x 95% range':>25} {'tan_delta':>11}")
    r95 = dist.range95
    for name, xn, t in zip(COLUMNS, X_NAMES, tan_mean):
        lo, hi = r95[xn]
        print(f"{name:<6} {getattr(mean, xn):11.3e} {f'[{lo:.2e}, {hi:.2e}]':>25} {t:11.2e}")
    print(f"R^2 (predicted vs measured): {r2:.4f}")
    return 0


# --------------------------------------------------------------------------
# predict


def cmd_predict(ctx: Context):
    from .plotting import plot_prediction_band

    cfg = ctx.config
    path = cfg.path("predict", "distribution")
    if not path.exists():
        raise FileNotFoundError(f"distribution file not found: {path}")
    with open(path, newline="") as fh:
        dist = LossFactorDistribution.read_csv(fh, layer_spec=cfg.layer_spec())
    depths = cfg._array("predict", "depths_um")
    if depths:
        calib = cfg.calibration()
        base = cfg.geometry()
        explicit_phi = "phi_deg" in cfg.section("geometry")
        # default domains per depth; phi from the config or the calibration table
        geoms = [CpwGeometry(base.w, base.g, d, base.phi if explicit_phi else interpolate_sidewall_angle(d, calib),
                             base.t_metal, base.eps_substrate) for d in depths]
    else:
        geoms = [cfg.geometry()]
    parts = ctx.participations(geoms)
    rows, stats = [], []
    for g, p in zip(geoms, parts):
        s = predict_qtls(p, dist, f"d{g.d:g}")
        stats.append(s)
        rows.append((g.d, g.phi, s.mean_qtls, s.ci95_lo, s.ci95_hi, s.n_excluded))
        print(f"d = {g.d:g} um, phi = {g.phi:g} deg: Q_TLS = {s.mean_qtls:.4e} "
              f"[{s.ci95_lo:.4e}, {s.ci95_hi:.4e}]")
    write_csv(ctx.out / "predict.csv", ("depth_um", "phi_deg", "qtls_mean", "qtls_lo95", "qtls_hi95",
                                        "excluded_samples"), rows)
    if len(geoms) > 1:
        plot_prediction_band([g.d for g in geoms], stats, ctx.out / "predict.svg")
    return 0


# --------------------------------------------------------------------------
# mesh-dump


def cmd_mesh_dump(ctx: Context):
    cfg = ctx.config
    geom = cfg.geometry()
    layers = cfg.layer_spec() if ctx.args.layers else None
    mesh = generate_mesh(build_cross_section(geom, layers), cfg.policy(geom))
    with open(ctx.out / "mesh.txt", "w") as fh:
        write_mesh(mesh, fh)
    print(f"{mesh.n_nodes} nodes, {mesh.n_triangles} triangles, min angle {mesh.min_angles().min():.2f} deg")
    return 0


# --------------------------------------------------------------------------


COMMANDS = {"solve": cmd_solve, "sweep": cmd_sweep, "fit": cmd_fit, "predict": cmd_predict,
            "mesh-dump": cmd_mesh_dump}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run configuration")
    common.add_argument("--out", default="out", help="output directory (default: ./out)")
    common.add_argument("--seed", type=int, default=0, help="Monte Carlo seed (unsigned 64-bit)")
    common.add_argument("--threads", type=int, default=1, help="worker processes")
    common.add_argument("--no-cache", action="store_true", help="ignore and do not write the participation cache")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="cpwloss", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"cpwloss {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("solve", parents=[common], help="capacitance, energies and convergence summary")
    p.add_argument("--levels", type=int, default=2, help="uniform refinement levels for the convergence table")
    p.add_argument("--domain-scale", type=float, default=1.0, help="multiply the domain size")
    p.add_argument("--dump-field", action="store_true", help="also write potentials and fields")
    sub.add_parser("sweep", parents=[common], help="participation vs trench depth")
    p = sub.add_parser("fit", parents=[common], help="extract loss factors from measurements")
    p.add_argument("--iterations", type=int, default=None, help="Monte Carlo iterations (overrides config)")
    sub.add_parser("predict", parents=[common], help="predict Q_TLS from a loss-factor distribution")
    p = sub.add_parser("mesh-dump", parents=[common], help="write the mesh as text")
    p.add_argument("--layers", action="store_true", help="mesh the thin interface layers explicitly")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.seed < 0 or args.seed >= 2 ** 64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    try:
        ctx = Context(args)
        return COMMANDS[args.command](ctx)
    except (ConfigError, DataError, GeometryError, PreconditionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MeshError, SolverError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
