"""Command-line entry points.

Subcommands: verify (property battery), profile (explicit-profile pack and
residual report), solve (one stream-function round-trip), run (full
simulation with CSV, snapshots and manifest), report (energy ledger and
figures from a finished run).  Exit codes: 0 success, 1 assertion/check
failure, 2 configuration or usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError
from .grid import ODD, ODD_EVEN, Params, ScalarField, Y_FRAME, YBAR_FRAME, build_grid
from . import io as bio
from .calculus import energy_xye
from .elliptic import build_operator, decompose_solve, solve_phi, velocity_pack
from .evolution import build_context, imex_step, init_from_theta, SimOptions
from .profiles import build_profile, profile_report
from .verify import reports_to_json, run_battery

log = logging.getLogger("bqlab")


def _apply_overrides(params: Params, args) -> Params:
    kw = {}
    if args.alpha is not None:
        kw["alpha"] = args.alpha
    if args.resolution is not None:
        kw["n_beta"] = args.resolution
        kw["n_sigma"] = args.resolution + 1
    if not kw:
        return params
    base = {f: getattr(params, f) for f in (
        "alpha", "delta", "k", "n_beta", "n_sigma", "sigma_min", "sigma_max",
        "l2_0", "lambda_0", "dt", "s_end", "tol_linear", "tol_quad")}
    if "alpha" in kw and params.delta == params.alpha:
        base["delta"] = None       # keep delta tracking alpha
    base.update(kw)
    return Params(**base)


def _load(args) -> bio.RunConfig:
    if args.config is not None:
        cfg = bio.load_config(args.config)
    else:
        cfg = bio.RunConfig(params=Params(), options=SimOptions(),
                            initial=bio.InitialData())
    cfg.params = _apply_overrides(cfg.params, args)
    return cfg


def cmd_verify(args) -> int:
    cfg = _load(args)
    reports = run_battery(cfg.params, seed=args.seed, quick=args.quick)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "verify_report.json").write_text(reports_to_json(reports))
    failed = 0
    for r in reports:
        status = "pass" if r.passed else ("FAIL" if r.hard else "flagged")
        print(f"{r.name:28s} {status:8s} ratio={r.measured_ratio:.6g} "
              f"samples={r.samples}")
        if r.hard and not r.passed:
            failed += 1
    return 1 if failed else 0


def cmd_profile(args) -> int:
    cfg = _load(args)
    params = cfg.params
    grid = build_grid(params)
    pack = build_profile(params, grid)
    op = build_operator(grid, params.alpha)
    phi_f = decompose_solve(pack.f_star, op, params).phi
    report = profile_report(pack, phi_f, params)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    bio.write_field(out_dir, "f_star", pack.f_star)
    bio.write_field(out_dir, "phi_f_star", phi_f)
    gam = ScalarField(grid, np.tile(pack.gamma_beta, (grid.n_sigma, 1)),
                      Y_FRAME, ("none", "none"))
    kb = ScalarField(grid, np.tile(pack.k_beta, (grid.n_sigma, 1)),
                     Y_FRAME, ("none", "none"))
    bio.write_field(out_dir, "gamma_beta", gam)
    bio.write_field(out_dir, "k_beta", kb)
    (out_dir / "profile_report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True))
    print(f"c = {report['c']:.9g}  relative residual (order-1 norm) = "
          f"{report['relative_residual_h1']:.6g}")
    worst = max(v["rel_error"] for v in report["l12"].values())
    print(f"tail-integral closed-form agreement: worst rel error {worst:.3e}")
    return 0


def cmd_solve(args) -> int:
    cfg = _load(args)
    params = cfg.params
    if args.source is not None:
        source = bio.read_field(Path(args.source))
        grid = source.grid
    else:
        grid = build_grid(params)
        pack = build_profile(params, grid)
        source = pack.f_star
    op = build_operator(grid, params.alpha)
    phi = solve_phi(source, op, params)
    split = decompose_solve(source, op, params)
    vel = velocity_pack(phi, params)
    out_dir = Path(args.out_dir)
    bio.write_field(out_dir, "source", source)
    bio.write_field(out_dir, "phi", phi)
    bio.write_field(out_dir, "phi_bar", split.phi_bar)
    for name in ("u", "v", "rcal", "lam1", "lam2", "lam3", "lam4"):
        bio.write_field(out_dir, name, getattr(vel, name))
    gap = float(np.abs(split.phi.data - phi.data).max())
    (out_dir / "solve_report.json").write_text(json.dumps({
        "alpha": params.alpha,
        "direct_vs_split_sup": gap,
        "tan_phi_max": vel.tan_phi_max,
    }, indent=2, sort_keys=True))
    print(f"solved {grid.n_sigma}x{grid.n_beta}; direct vs split sup gap "
          f"{gap:.3e}")
    return 0


def _gaussian(grid, amplitude, center, width, angular, frame, parity):
    radial = amplitude * np.exp(-((grid.sigma - center) / width) ** 2)
    return ScalarField(grid, np.outer(radial, angular), frame, parity)


def make_initial_state(cfg: bio.RunConfig, ctx):
    """Initial fields from the config's Gaussian-bump description."""
    grid = ctx.grid
    ini = cfg.initial
    theta0 = None
    if ini.theta_amplitude != 0.0:
        theta0 = _gaussian(grid, ini.theta_amplitude, ini.theta_center,
                           ini.theta_width, grid.sin_b, YBAR_FRAME, ODD_EVEN)
    eps0 = None
    if ini.eps_amplitude != 0.0:
        eps0 = _gaussian(grid, ini.eps_amplitude, ini.eps_center,
                         ini.eps_width, grid.sin_2b, Y_FRAME, ODD)
    state = init_from_theta(theta0, eps0, ctx)
    if ini.e0_target is not None:
        rep = energy_xye(state.eps, state.xi, state.phi, ctx.params.k,
                         ctx.params)
        if rep.E > 0.0:
            scale = math.sqrt(ini.e0_target / rep.E)
            state.eps = state.eps.like(scale * state.eps.data)
            state.xi = state.xi.like(scale * state.xi.data)
            state.phi = state.phi.like(scale * state.phi.data)
    return state


def cmd_run(args) -> int:
    cfg = _load(args)
    params = cfg.params
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ctx = build_context(params, cfg.options)
    state = make_initial_state(cfg, ctx)
    n_steps = 0
    with bio.CsvWriter(out_dir / "series.csv") as writer:
        while state.mod.s < params.s_end - 1e-12:
            dt = min(params.dt, params.s_end - state.mod.s)
            state = imex_step(state, ctx, dt)
            writer.write_row(state.history[-1])
            n_steps += 1
            if cfg.snapshot_every and n_steps % cfg.snapshot_every == 0:
                tag = f"{n_steps:06d}"
                s_now = state.mod.s
                bio.write_field(out_dir, f"eps_{tag}", state.eps, s=s_now)
                bio.write_field(out_dir, f"xi_{tag}", state.xi, s=s_now)
                bio.write_field(out_dir, f"phi_{tag}", state.phi, s=s_now)
    bio.write_field(out_dir, "eps_final", state.eps, s=state.mod.s)
    bio.write_field(out_dir, "xi_final", state.xi, s=state.mod.s)
    bio.write_field(out_dir, "phi_final", state.phi, s=state.mod.s)
    bio.write_manifest(out_dir, cfg.echo(), ctx.grid, args.seed, 0.0,
                       state.mod.s)
    print(f"run complete: {n_steps} steps to s = {state.mod.s:.6g}; "
          f"E = {state.history[-1]['E']:.6g}")
    return 0


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    csv_path = run_dir / "series.csv"
    if not csv_path.exists():
        raise ConfigError(f"no series.csv in {run_dir}")
    history = bio.read_history(csv_path)
    out_dir = Path(args.out_dir) if args.out_dir else run_dir
    from .report import render_report   # matplotlib import deferred
    ledger = render_report(history, out_dir)
    kappa = ledger["kappa_hat"]
    print("fitted decay rate:",
          f"{kappa:.6g}" if kappa is not None else "n/a (not decreasing)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bqlab",
        description="dynamic-rescaling laboratory for the axisymmetric "
                    "Boussinesq system")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_default):
        p.add_argument("--config", type=str, default=None,
                       help="INI config file (defaults used when omitted)")
        p.add_argument("--out-dir", type=str, default=out_default)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--alpha", type=float, default=None,
                       help="override the config alpha")
        p.add_argument("--resolution", type=int, default=None,
                       help="override n_beta (n_sigma becomes resolution+1)")

    p = sub.add_parser("verify", help="run the property-check battery")
    common(p, "verify_out")
    p.add_argument("--quick", action="store_true",
                   help="reduced sample counts for smoke testing")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("profile", help="build the explicit profile and its "
                                       "residual report")
    common(p, "profile_out")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("solve", help="one stream-function solve round-trip")
    common(p, "solve_out")
    p.add_argument("--source", type=str, default=None,
                   help="field snapshot (.f64) to use as source; defaults "
                        "to the explicit profile")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("run", help="full simulation")
    common(p, "run_out")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="energy ledger and figures from a run")
    p.add_argument("run_dir", type=str)
    p.add_argument("--out-dir", type=str, default=None)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        code = args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return 2
    except AssertionError as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return 1
    return code


if __name__ == "__main__":
    sys.exit(main())
