"""simctl: command-line driver for the lab.

Subcommands:
    run-eps    integrate the finite-scale model; exit 0 only if the run
               completed and the six uniform bound checks pass
    run-limit  integrate the zero-scale limit model (plus branching log)
    ess        solve the static evolutionarily stable measure
    sweep      run a decreasing scale list plus the limit; exit 0 only if
               the scale-to-limit load distances decrease monotonically
    compare    run the three correction modes (off, distance_ramp,
               sqrt_mortality) on one scenario and emit the re-emergence
               probe report

Exit codes: 0 success, 1 bound-check or sweep gate failure, 2 invalid
config (message names the violated hypothesis), 3 numeric abort (message
carries the time and trait location). The SIMCTL_THREADS environment
variable caps worker threads used by sweeps and the uniqueness probe.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .config import RunPlan, load_plan
from .correction import CorrectionSettings
from .diagnostics import ghost_population_probe, eps_limit_comparison
from .errors import ConfigError, NumericsError
from .ess import (_worker_count, ess_active_set, ess_uniqueness_probe,
                  ess_verify)
from .forward import run_forward
from .grid import SetMask
from .limit import detect_branching, run_limit, support_speed_bound
from . import diagnostics, runio


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="simctl",
                                description="selection-mutation dynamics lab")
    sub = p.add_subparsers(dest="cmd", required=True)
    for name, doc in [("run-eps", "integrate the finite-scale model"),
                      ("run-limit", "integrate the zero-scale limit model"),
                      ("ess", "solve the static stable measure"),
                      ("sweep", "scale sweep with cross-scale gates"),
                      ("compare", "correction-mode comparison on one "
                                  "scenario")]:
        sp = sub.add_parser(name, help=doc)
        sp.add_argument("--config", required=True,
                        help="TOML file path or preset name")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--quiet", action="store_true")
    return p


def _say(args, msg: str) -> None:
    if not args.quiet:
        print(msg)


def _require_initial(plan: RunPlan) -> None:
    if plan.phi0 is None:
        raise ConfigError("this command needs an [initial] section")


def _forward(plan: RunPlan, eps: float, correction: CorrectionSettings):
    return run_forward(plan.env, plan.mutation, plan.competition, correction,
                       eps, plan.phi0, plan.t_end, plan.sample_dt,
                       mass_target=plan.mass_target, dt=plan.dt,
                       mass_ceiling=plan.mass_ceiling, p_ref=plan.p_max)


def _limit(plan: RunPlan):
    return run_limit(plan.env, plan.mutation, plan.competition,
                     plan.correction, plan.phi0, plan.t_end, plan.sample_dt,
                     plan.p_max, dt=plan.dt, cfl=plan.cfl,
                     tol_zero=plan.tol_zero)


def _guarded(args, runner):
    """Run, and on numeric abort keep the partial trajectory for writing."""
    try:
        return runner(), 0
    except NumericsError as err:
        print(f"numeric abort: {err}", file=sys.stderr)
        return getattr(err, "trajectory", None), 3


def _collect(future):
    """_guarded, for a run already submitted to the worker pool."""
    try:
        return future.result(), 0
    except NumericsError as err:
        print(f"numeric abort: {err}", file=sys.stderr)
        return getattr(err, "trajectory", None), 3


def _bound_constants(plan: RunPlan, traj, eps: float):
    """Frozen constants from [bounds], else calibrated on this run."""
    if plan.bounds is not None:
        b = plan.bounds
        return diagnostics.BoundConstants(
            c_mass=float(b["c_mass"]), c_phi=float(b["c_phi"]),
            c_lip=float(b["c_lip"]), c_curv=float(b["c_curv"]),
            c_jump=float(b["c_jump"]),
            edge_fraction=float(b.get("edge_fraction", 0.05)))
    return diagnostics.calibrate_bound_constants(
        traj.records, eps, plan.correction.depth(eps))


def _cmd_run_eps(plan: RunPlan, args) -> int:
    if plan.eps is None:
        raise ConfigError("run-eps needs a top-level eps value")
    _require_initial(plan)
    traj, code = _guarded(args, lambda: _forward(plan, plan.eps,
                                                 plan.correction))
    out = Path(args.out)
    files = runio.write_trajectory(out, traj) if traj is not None else {}
    checks_ok = False
    if code == 0 and traj is not None:
        constants = _bound_constants(plan, traj, plan.eps)
        rep = diagnostics.check_apriori(traj.records, plan.eps,
                                        plan.correction.depth(plan.eps),
                                        constants)
        report = {"constants": constants.as_dict(),
                  "calibrated_here": plan.bounds is None,
                  **rep.as_dict()}
        files.update(runio.write_json(out, "bounds_report.json", report))
        checks_ok = rep.all_passed
    runio.write_manifest(out, "run-eps", plan.source, plan.digest, args.seed,
                         files, failure=traj.failure if traj else "no output")
    _say(args, f"run-eps: {len(traj.samples) if traj else 0} samples, "
               f"bounds {'ok' if checks_ok else 'FAILED'} -> {out}")
    if code:
        return code
    return 0 if checks_ok else 1


def _cmd_run_limit(plan: RunPlan, args) -> int:
    _require_initial(plan)
    traj, code = _guarded(args, lambda: _limit(plan))
    out = Path(args.out)
    files = {}
    if traj is not None:
        if traj.records and "extinction-regime" in traj.records[0].flags:
            print("warning: extinction regime, the stable measure at t=0 "
                  "is empty", file=sys.stderr)
        traj.events.extend(detect_branching(traj))
        files = runio.write_trajectory(out, traj)
        report = {
            "p_max": plan.p_max,
            "tol_zero": plan.tol_zero if plan.tol_zero is not None
            else 10.0 * plan.grid.h * plan.p_max,
            "support_speed_bound": support_speed_bound(plan.mutation,
                                                       plan.p_max),
            "splits": sum(ev.get("kind") == "split" for ev in traj.events),
            "merges": sum(ev.get("kind") == "merge" for ev in traj.events),
            "reanchors": sum(ev.get("kind") == "reanchor"
                             for ev in traj.events),
        }
        files.update(runio.write_json(out, "limit_report.json", report))
    runio.write_manifest(out, "run-limit", plan.source, plan.digest,
                         args.seed, files,
                         failure=traj.failure if traj else "no output")
    _say(args, f"run-limit: {len(traj.samples) if traj else 0} samples "
               f"-> {out}")
    return code


def _cmd_ess(plan: RunPlan, args) -> int:
    out = Path(args.out)
    mask = SetMask(plan.grid, np.ones(plan.grid.n, dtype=bool))
    measure = ess_active_set(mask, plan.env, plan.competition)
    cert = ess_verify(measure, mask, plan.env, plan.competition)
    files = runio.write_csv(out, "measure.csv", ["x", "weight"],
                            [[float(x), float(w)] for x, w
                             in zip(measure.xs, measure.weights)])
    files.update(runio.write_json(out, "certificate.json", cert.as_dict()))
    if not args.quiet:
        print(f"stable measure: {measure.n_atoms} atoms, "
              f"total mass {measure.total:.8g}")
        for x, w in zip(measure.xs, measure.weights):
            print(f"  x = {x: .8g}   weight = {w:.8g}")
        print("certificate: " + json.dumps(cert.as_dict(), sort_keys=True))

    opts = plan.ess_options
    n_inits = int(opts.get("uniqueness_inits", 0))
    if n_inits > 0 and plan.mutation is None:
        # the probe drives a replicator-mutator flow, impossible without a
        # mutation kernel; report the omission rather than fail the solve
        _say(args, "uniqueness probe skipped: no mutation kernel configured")
        n_inits = 0
    if n_inits > 0:
        rep = ess_uniqueness_probe(
            mask, plan.env, plan.competition, plan.mutation,
            float(opts.get("spread_scale", 2.0 * plan.grid.h)),
            n_inits=n_inits, seed=args.seed)
        files.update(runio.write_json(out, "uniqueness.json", rep.as_dict()))
        if not args.quiet:
            print(f"uniqueness probe: {n_inits} starts, metric {rep.metric}, "
                  f"max pairwise distance {rep.max_pairwise:.3g}")
    runio.write_manifest(out, "ess", plan.source, plan.digest, args.seed,
                         files)
    _say(args, f"ess: certificate {'ok' if cert.passed else 'FAILED'} "
               f"-> {out}")
    return 0 if cert.passed else 3


def _cmd_sweep(plan: RunPlan, args) -> int:
    if not plan.sweep_eps:
        raise ConfigError("sweep needs a [sweep] eps list")
    _require_initial(plan)
    out = Path(args.out)
    files = {}
    # fan the scale runs and the limit run out across worker threads; each
    # run owns its own output subdirectory
    workers = _worker_count(len(plan.sweep_eps) + 1)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_forward, plan, e, plan.correction)
                   for e in plan.sweep_eps]
        limit_future = pool.submit(_limit, plan)
        runs = []
        for e, fut in zip(plan.sweep_eps, futures):
            traj, code = _collect(fut)
            if code:
                runio.write_manifest(out, "sweep", plan.source, plan.digest,
                                     args.seed, files,
                                     failure=f"eps={e!r}: "
                                             f"{traj.failure if traj else '?'}")
                return code
            runs.append(traj)
            sub = out / f"eps_{e:g}"
            for name, digest in runio.write_trajectory(sub, traj).items():
                files[f"{sub.name}/{name}"] = digest
            _say(args, f"sweep: eps={e:g} done ({len(traj.samples)} samples)")
        limit_traj, code = _collect(limit_future)
    if code:
        runio.write_manifest(out, "sweep", plan.source, plan.digest,
                             args.seed, files, failure="limit run aborted")
        return code
    for name, digest in runio.write_trajectory(out / "limit",
                                               limit_traj).items():
        files[f"limit/{name}"] = digest

    e_ref = plan.sweep_eps[0]
    ref = runs[0]
    constants = diagnostics.calibrate_bound_constants(
        ref.records, e_ref, plan.correction.depth(e_ref))
    bounds = []
    for e, traj in zip(plan.sweep_eps, runs):
        rep = diagnostics.check_apriori(traj.records, e,
                                        plan.correction.depth(e), constants)
        bounds.append(rep.as_dict())
    comparison = eps_limit_comparison(runs, limit_traj)
    totals = [traj.records[-1].dissipation_cum for traj in runs]
    spread = max(totals) / max(min(totals), 1e-300)
    report = {
        "eps": plan.sweep_eps,
        "bound_constants": constants.as_dict(),
        "bounds": bounds,
        "comparison": comparison,
        "dissipation_totals": totals,
        "dissipation_spread": spread,
        "dissipation_uniform": bool(spread <= 3.0),
        "bounds_all_passed": all(b["all_passed"] for b in bounds),
    }
    files.update(runio.write_json(out, "sweep_report.json", report))
    runio.write_manifest(out, "sweep", plan.source, plan.digest, args.seed,
                         files)
    ok = comparison["monotone_load_gap"]
    _say(args, f"sweep: load distances "
               f"{'monotone' if ok else 'NOT monotone'}, bounds "
               f"{'ok' if report['bounds_all_passed'] else 'FAILED'}, "
               f"dissipation spread {spread:.3g} -> {out}")
    return 0 if ok else 1


def _cmd_compare(plan: RunPlan, args) -> int:
    if plan.eps is None:
        raise ConfigError("compare needs a top-level eps value")
    _require_initial(plan)
    if plan.correction.mode != "distance_ramp":
        raise ConfigError("compare needs [correction] mode distance_ramp; "
                          "the off and sqrt_mortality variants are derived "
                          "from its threshold and cap")
    if plan.probe is None:
        raise ConfigError("compare needs a [probe] section (window of the "
                          "suppressed trait region)")
    base = plan.correction
    variants = {
        "off": CorrectionSettings(mode="off", c_threshold=base.c_threshold),
        "distance_ramp": base,
        "sqrt_mortality": CorrectionSettings(mode="sqrt_mortality",
                                             c_threshold=base.c_threshold,
                                             cap=base.cap),
    }
    out = Path(args.out)
    files = {}
    runs = {}
    for name, settings in variants.items():
        traj, code = _guarded(args, lambda s=settings: _forward(plan,
                                                                plan.eps, s))
        if code:
            runio.write_manifest(out, "compare", plan.source, plan.digest,
                                 args.seed, files,
                                 failure=f"{name} run aborted")
            return code
        runs[name] = traj
        for fname, digest in runio.write_trajectory(out / name, traj).items():
            files[f"{name}/{fname}"] = digest
        _say(args, f"compare: {name} done ({len(traj.samples)} samples)")
    lo, hi = plan.probe["window"]
    depth = base.depth(plan.eps)
    report = ghost_population_probe(
        runs, float(lo), float(hi),
        switch_time=plan.env.switch_time or 0.0,
        threshold=float(plan.probe.get("threshold", 0.1)),
        subunit_bound=math.exp(-depth / (2.0 * plan.eps)))
    files.update(runio.write_json(out, "probe.json", report))
    runio.write_manifest(out, "compare", plan.source, plan.digest, args.seed,
                         files)
    ramp = report["runs"]["distance_ramp"]
    _say(args, f"compare: off re-emerged = "
               f"{report['runs']['off']['re_emerged']}, distance_ramp "
               f"suppressed = {not ramp['re_emerged']} -> {out}")
    return 0


_DISPATCH = {"run-eps": _cmd_run_eps, "run-limit": _cmd_run_limit,
             "ess": _cmd_ess, "sweep": _cmd_sweep, "compare": _cmd_compare}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        plan = load_plan(args.config)
        return _DISPATCH[args.cmd](plan, args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except NumericsError as err:
        print(f"numeric abort: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
