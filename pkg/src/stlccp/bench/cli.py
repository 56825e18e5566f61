"""Command line entry point: ``stlccp solve`` and ``stlccp sweep``.

The log level comes from the ``STLCCP_LOG_LEVEL`` environment variable
(default ``WARNING``).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import List

import numpy as np

from ..ccp import solve_ccp
from ..decomposition import DecompositionError, decompose
from ..stl import FormulaError, HorizonError, unfold
from ..stl.tree import UNTIL_SEMANTICS
from .plots import plot_sweep, plot_workspace
from .scenario import Scenario, ScenarioError, load_scenario

log = logging.getLogger("stlccp")

LOG_ENV = "STLCCP_LOG_LEVEL"
SWEEP_FIELDS = ("T", "seed", "seconds", "robustness", "status")


def parse_horizons(text: str) -> List[int]:
    """``"50:140:5"`` (inclusive range) or a comma list such as ``"25,50"``."""
    try:
        if ":" in text:
            parts = [int(p) for p in text.split(":")]
            if len(parts) == 2:
                parts.append(1)
            start, stop, step = parts
            if step <= 0 or stop < start:
                raise ValueError
            return list(range(start, stop + 1, step))
        return [int(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad horizon list {text!r}; use START:STOP:STEP or a comma list") from None


def _apply_overrides(sc: Scenario, args) -> Scenario:
    cfg = sc.ccp
    if getattr(args, "k", None) is not None:
        cfg = replace(cfg, k=args.k)
    if getattr(args, "tau", None) is not None:
        cfg = replace(cfg, penalty_weight=args.tau)
    if getattr(args, "restarts", None) is not None:
        cfg = replace(cfg, restarts=args.restarts)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, rng_seed=args.seed)
    return replace(sc, ccp=cfg)


def _solve(sc: Scenario, until: str):
    tree = unfold(sc.formula, 0, sc.T, until=until)
    prog = decompose(tree, sc.system, sc.x0, sc.T, sc.ccp.k)
    return solve_ccp(tree, sc.system, sc.x0, sc.T, sc.ccp, prog)


def write_trajectory_csv(path, traj):
    x, u = np.asarray(traj.x), np.asarray(traj.u)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x{i}" for i in range(x.shape[1])] + [f"u{j}" for j in range(u.shape[1])])
        for t in range(x.shape[0]):
            uu = [repr(float(v)) for v in u[t]] if t < u.shape[0] else [""] * u.shape[1]
            w.writerow([t] + [repr(float(v)) for v in x[t]] + uu)


def read_trajectory_csv(path):
    """Return (x, u) arrays from a file written by :func:`write_trajectory_csv`."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    nx = sum(h.startswith("x") for h in header)
    x = np.array([[float(v) for v in r[1:1 + nx]] for r in rows[1:]])
    u = np.array([[float(v) for v in r[1 + nx:]] for r in rows[1:-1]])
    return x, u


def cmd_solve(args) -> int:
    sc = _apply_overrides(load_scenario(args.scenario), args)
    rep = _solve(sc, args.until_semantics)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = {
        "scenario": str(args.scenario),
        "T": sc.T,
        "k": sc.ccp.k,
        "penalty_weight": sc.ccp.penalty_weight,
        "quad_weight": sc.ccp.quad_weight,
        "restarts": sc.ccp.restarts,
        "rng_seed": sc.ccp.rng_seed,
        "until_semantics": args.until_semantics,
        "report": rep.to_dict(),
    }
    (out / "result.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    written = ["result.json"]
    if rep.trajectory is not None:
        write_trajectory_csv(out / "trajectory.csv", rep.trajectory)
        written.append("trajectory.csv")
        if args.svg:
            lo, hi = sc.system.x_lo, sc.system.x_hi
            bounds = (lo[0], hi[0], lo[1], hi[1]) if np.all(np.isfinite([lo[0], hi[0], lo[1], hi[1]])) else None
            plot_workspace(out / "trajectory.svg", sc.regions, [rep.trajectory.x], bounds,
                           title=f"T={sc.T}, robustness {rep.robustness:.3f}")
            written.append("trajectory.svg")
    print(f"status={rep.status} robustness={rep.robustness:.6f} seed={rep.seed} "
          f"iterations={rep.iterations} seconds={rep.seconds:.2f}")
    print("wrote " + ", ".join(str(out / f) for f in written))
    return 0


def cmd_sweep(args) -> int:
    base = _apply_overrides(load_scenario(args.scenario), args)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    rows = []
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_FIELDS)
        for T in args.horizons:
            sc = base.with_horizon(T)
            tree = unfold(sc.formula, 0, T, until=args.until_semantics)
            prog = decompose(tree, sc.system, sc.x0, T, sc.ccp.k)
            for trial in range(args.trials):
                seed = base.ccp.rng_seed + trial
                cfg = replace(sc.ccp, rng_seed=seed)
                try:
                    rep = solve_ccp(tree, sc.system, sc.x0, T, cfg, prog)
                    row = (T, seed, rep.seconds, rep.robustness, rep.status)
                except (ArithmeticError, ValueError, RuntimeError) as exc:
                    log.warning("T=%d seed=%d failed: %s", T, seed, exc)
                    row = (T, seed, float("nan"), float("nan"), f"error: {exc}")
                rows.append(row)
                w.writerow([row[0], row[1], f"{row[2]:.6f}", repr(float(row[3])), row[4]])
                fh.flush()
                log.info("T=%d seed=%d robustness %.4f (%s) %.2fs", T, seed, row[3], row[4], row[2])

    print(f"{'T':>5} {'trials':>6} {'success':>7} {'mean_s':>9} {'mean_rob':>9}")
    for T in args.horizons:
        sel = [r for r in rows if r[0] == T]
        sec = np.array([r[2] for r in sel])
        rob = np.array([r[3] for r in sel])
        ok = int(np.sum(rob >= 0))
        print(f"{T:>5} {len(sel):>6} {ok:>7} {np.nanmean(sec):>9.3f} {np.nanmean(rob):>9.4f}")
    total_ok = sum(1 for r in rows if r[3] >= 0)
    print(f"success {total_ok}/{len(rows)}; wrote {out}")
    if args.plot:
        plot_sweep(args.plot, [r[0] for r in rows], [r[2] for r in rows], [r[3] for r in rows])
        print(f"wrote {args.plot}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stlccp", description="STL trajectory synthesis by convex-concave QP iterations.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("scenario", help="scenario JSON file")
        sp.add_argument("--k", type=float, help="smoothing parameter")
        sp.add_argument("--tau", type=float, help="penalty weight on the concave-row slacks")
        sp.add_argument("--until-semantics", choices=UNTIL_SEMANTICS, default="paper")

    s = sub.add_parser("solve", help="solve one scenario and write result files")
    common(s)
    s.add_argument("--seed", type=int, help="first restart seed (default: scenario rng_seed)")
    s.add_argument("--restarts", type=int, help="number of seeded restarts")
    s.add_argument("--out", default="out", help="output directory (default: out)")
    s.add_argument("--svg", action="store_true", help="also draw the trajectory as SVG")
    s.set_defaults(func=cmd_solve)

    w = sub.add_parser("sweep", help="solve over a range of horizons, one row per trial")
    common(w)
    w.add_argument("--horizons", type=parse_horizons, required=True, help="START:STOP:STEP or comma list")
    w.add_argument("--trials", type=int, default=5, help="trials per horizon; trial i uses seed rng_seed+i")
    w.add_argument("--restarts", type=int, default=1, help="restarts inside each trial (default 1)")
    w.add_argument("--out", default="results.csv", help="output CSV")
    w.add_argument("--plot", help="optional figure path (e.g. sweep.svg or sweep.png)")
    w.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, HorizonError, FormulaError, DecompositionError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
