"""Command-line interface: ``ssctm <command> --model ...``.

Exit codes: 0 success / stable, 2 bad input or configuration, 3 unstable,
4 ambiguous.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import analysis, invariant_set, stability
from .io import csv_text, fmt, json_text
from .model import ModelFormatError, as_inflow, validate
from .scenarios import BUNDLED, resolve_model
from .simulate import InsufficientReplications, queue_stats, resolve_jobs, simulate
from .dynamics import StepTooLarge

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_UNSTABLE = 3
EXIT_AMBIGUOUS = 4

_VERDICT_EXIT = {
    stability.STABLE: EXIT_OK,
    stability.UNSTABLE: EXIT_UNSTABLE,
    stability.AMBIGUOUS: EXIT_AMBIGUOUS,
}


class ConfigError(Exception):
    pass


def _floats(text: str, what: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"{what}: expected comma-separated numbers, got {text!r}") from None


def _load(args):
    try:
        model = resolve_model(args.model)
    except (OSError, ModelFormatError, KeyError) as exc:
        raise ConfigError(f"cannot load model {args.model!r}: {exc}") from exc
    return model


def _usable(model):
    rep = validate(model)
    for w in rep.warnings:
        print(f"warning: {w}", file=sys.stderr)
    if not rep.ok:
        raise ConfigError("invalid model: " + "; ".join(rep.errors))
    return model


def _inflow(model, text):
    if text is None:
        raise ConfigError("--r is required")
    try:
        return as_inflow(model, _floats(text, "--r"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _grid(text):
    if text is None:
        return analysis.DEFAULT_GRID
    try:
        return analysis.GridSpec.parse(text)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _artifact(args, model, ext: str, params: dict) -> Path:
    """``<command>-<model>-<hash>.<ext>`` in ``--out``; the hash covers every input."""
    key = json.dumps({"command": args.command, "model": model.to_dict(), "params": params},
                     sort_keys=True, default=str)
    digest = hashlib.sha256(key.encode()).hexdigest()[:12]
    name = model.name or "model"
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{args.command}-{name}-{digest}.{ext}"
    if path.exists() and not args.force:
        raise ConfigError(f"{path} exists; pass --force to overwrite")
    return path


def _write(path: Path, text: str) -> None:
    path.write_text(text)
    print(f"wrote {path}")


# -- commands ----------------------------------------------------------


def cmd_validate(args) -> int:
    model = _load(args)
    rep = validate(model)
    for e in rep.errors:
        print(f"error: {e}")
    for w in rep.warnings:
        print(f"warning: {w}")
    print(f"{model.name or args.model}: {'valid' if rep.ok else 'INVALID'} "
          f"({len(rep.errors)} errors, {len(rep.warnings)} warnings)")
    return EXIT_OK if rep.ok else EXIT_CONFIG


def cmd_decide(args) -> int:
    model = _usable(_load(args))
    r = _inflow(model, args.r)
    verdict = stability.decide(model, r)
    out = verdict.to_dict()
    out["r"] = r.tolist()
    text = json_text(out)
    sys.stdout.write(text)
    if args.out is not None:
        _write(_artifact(args, model, "json", {"r": r.tolist()}), text)
    return _VERDICT_EXIT[verdict.tag]


def cmd_region(args) -> int:
    model = _usable(_load(args))
    grid = _grid(args.grid)
    rm = analysis.classify_region(model, grid, jobs=args.jobs)
    path = _artifact(args, model, "csv", {"grid": str(grid)})
    _write(path, rm.to_csv())
    for tag in (stability.STABLE, stability.AMBIGUOUS, stability.UNSTABLE, analysis.OUT_OF_DOMAIN):
        print(f"{tag}: {rm.count(tag)}")
    return EXIT_OK


def cmd_jmax(args) -> int:
    model = _usable(_load(args))
    grid = _grid(args.grid)
    tb = analysis.throughput_bounds(model, grid, jobs=args.jobs)
    rows = [
        ["upper", tb.J_upper, *(tb.argmax_upper or (np.nan, np.nan)), tb.grid_J_upper],
        ["lower", tb.J_lower, *(tb.argmax_lower or (np.nan, np.nan)), tb.grid_J_lower],
    ]
    path = _artifact(args, model, "csv", {"grid": str(grid)})
    _write(path, csv_text(["bound", "J", "r1", "r2", "grid_J"], rows))
    print(f"{tb.J_lower:g} ≤ Jmax ≤ {tb.J_upper:g}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    base = _usable(_load(args))
    if base.K != 2:
        raise ConfigError("sweep needs a two-cell base model")
    grid = _grid(args.grid)
    lams = _floats(args.lambdas, "--lambdas")
    dFs = _floats(args.dFs, "--dFs")
    if not lams or not dFs:
        raise ConfigError("--lambdas and --dFs must be nonempty")
    if any(x <= 0 for x in lams) or any(not 0 <= x < 6000 + 1e-9 for x in dFs):
        raise ConfigError("need lambda > 0 and 0 <= dF <= 6000")
    params = [(lam, dF) for lam in lams for dF in dFs]
    rows = analysis.sweep(base, params, grid, jobs=args.jobs)
    path = _artifact(args, base, "csv", {"grid": str(grid), "params": params})
    _write(path, analysis.sweep_csv(rows))
    for row in rows:
        print(f"lambda={row.lam:g} dF={row.dF:g}: {row.J_lower:g} ≤ Jmax ≤ {row.J_upper:g}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    model = _usable(_load(args))
    r = _inflow(model, args.r)
    if args.horizon <= 0 or args.dt <= 0:
        raise ConfigError("--horizon and --dt must be positive")
    if not 0 <= args.i0 < model.m:
        raise ConfigError(f"--i0 must lie in 0..{model.m - 1}")
    if args.n0 is not None:
        n0 = np.array(_floats(args.n0, "--n0"))
        if n0.shape != (model.K,) or np.any(n0 < 0):
            raise ConfigError("--n0 must list K nonnegative densities")
    else:
        n0 = invariant_set.build_invariant_box(model, r).nbot
    params = {"r": r.tolist(), "n0": n0.tolist(), "i0": args.i0, "horizon": args.horizon,
              "dt": args.dt, "seed": args.seed, "reps": args.reps, "record_dt": args.record_dt}
    traj = simulate(model, r, n0, args.i0, args.horizon, args.dt, args.seed,
                    record_dt=args.record_dt)
    path = _artifact(args, model, "csv", params)
    _write(path, traj.to_csv())
    print(f"final state {[fmt(x) for x in traj.n[-1]]}, max total {fmt(traj.total.max())}")
    if args.reps >= 2:
        qs = queue_stats(model, r, args.reps, args.horizon, args.dt, args.seed,
                         n0=n0, jobs=args.jobs, record_dt=args.record_dt)
        stats = {
            "reps": qs.reps, "mean_n1": qs.mean_n1, "slope": qs.slope,
            "slope_ci": list(qs.slope_ci), "max_total": qs.max_total,
            "mgf_probe": qs.mgf_probe, "per_rep_slopes": qs.per_rep_slopes.tolist(),
        }
        spath = path.with_name(path.stem + "-stats.json")
        if spath.exists() and not args.force:
            raise ConfigError(f"{spath} exists; pass --force to overwrite")
        _write(spath, json_text(stats))
        lo, hi = qs.slope_ci
        print(f"N1 slope {qs.slope:.6g} veh/mi/hr, 99% CI [{lo:.6g}, {hi:.6g}]")
    return EXIT_OK


def cmd_invariant_set(args) -> int:
    model = _usable(_load(args))
    r = _inflow(model, args.r)
    box = invariant_set.build_invariant_box(model, r)
    rep = invariant_set.verify_boundary_directionality(model, r, box, args.samples, args.seed)
    out = {
        "r": r.tolist(),
        "box": box.to_dict(),
        "directionality": {"checked": rep.checked, "violations": rep.n_violations},
    }
    text = json_text(out)
    sys.stdout.write(text)
    _write(_artifact(args, model, "json", {"r": r.tolist(), "samples": args.samples,
                                           "seed": args.seed}), text)
    return EXIT_OK


# -- parser ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ssctm", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_, out_default="."):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--model", required=True,
                        help=f"model JSON path or a bundled name ({', '.join(BUNDLED)})")
        sp.add_argument("--seed", type=int, default=42)
        sp.add_argument("--out", default=out_default, help="artifact directory")
        sp.add_argument("--force", action="store_true", help="overwrite existing artifacts")
        sp.add_argument("--jobs", type=int, default=None,
                        help="worker processes (default: $SSCTM_JOBS or 1)")
        sp.set_defaults(func=fn)
        return sp

    add("validate", cmd_validate, "check a model file", out_default=None)
    sp = add("decide", cmd_decide, "stability verdict for one inflow", out_default=None)
    sp.add_argument("--r", help="inflow vector, e.g. 3600,600")
    sp = add("region", cmd_region, "classify a grid of two-cell inflows")
    sp.add_argument("--grid", help="r1min:r1max:step,r2min:r2max:step")
    sp = add("jmax", cmd_jmax, "throughput bounds over the grid")
    sp.add_argument("--grid", help="r1min:r1max:step,r2min:r2max:step")
    sp = add("sweep", cmd_sweep, "throughput bounds across incident frequency and size")
    sp.add_argument("--grid", help="r1min:r1max:step,r2min:r2max:step")
    sp.add_argument("--lambdas", default="1,2", help="incident rates, comma-separated")
    sp.add_argument("--dFs", default="3000,6000", help="capacity drops, comma-separated")
    sp = add("simulate", cmd_simulate, "Monte Carlo trajectory and queue statistics")
    sp.add_argument("--r", help="inflow vector")
    sp.add_argument("--horizon", type=float, default=200.0, help="hours")
    sp.add_argument("--dt", type=float, default=1e-3, help="hours")
    sp.add_argument("--reps", type=int, default=1)
    sp.add_argument("--record-dt", dest="record_dt", type=float, default=0.1)
    sp.add_argument("--n0", help="initial densities (default: lower corner of the invariant box)")
    sp.add_argument("--i0", type=int, default=0, help="initial mode")
    sp = add("invariant-set", cmd_invariant_set, "invariant box and a face check")
    sp.add_argument("--r", help="inflow vector")
    sp.add_argument("--samples", type=int, default=1000)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.jobs = resolve_jobs(args.jobs)
    except ValueError:
        print("error: SSCTM_JOBS must be an integer", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InsufficientReplications, StepTooLarge) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
