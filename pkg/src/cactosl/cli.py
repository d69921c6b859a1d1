"""``cactosl`` command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 numerical failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import glob
import logging
import os
import re
import sys

import numpy as np

from . import config as cfgmod
from . import ddp, gradcheck
from .evaluation import (baseline_ics, compare_activations, evaluate_policy, write_curve_csv,
                         write_eval_csv)
from .net import CheckpointError, load_checkpoint
from .trainer import NumericalError, train

log = logging.getLogger("cactosl")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3


def _load_config(args, required=True):
    if args.config is None:
        if required:
            raise cfgmod.ConfigError("--config is required for this command")
        return None
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["run.seeds"] = [args.seed]
    if getattr(args, "workers", None) is not None:
        overrides["run.workers"] = args.workers
    if getattr(args, "out", None) is not None:
        overrides["run.out_dir"] = args.out
    with open(args.config) as fh:
        text = fh.read()
    return cfgmod.from_text(text, args.config, overrides)


def _workers(run) -> int:
    return run.workers if run.workers > 0 else (os.cpu_count() or 1)


def _prepare_out(path, run):
    os.makedirs(path, exist_ok=True)
    with open(os.path.join(path, "resolved.cfg"), "w") as fh:
        fh.write(run.resolved_text())


def cmd_train(args) -> int:
    run = _load_config(args)
    if args.dry_run:
        sys.stdout.write(run.resolved_text())
        return EXIT_OK
    _prepare_out(run.out_dir, run)
    for seed in run.seeds:
        out = os.path.join(run.out_dir, f"seed_{seed}")
        _prepare_out(out, run)
        res = train(run.task, run.trainer, seed=seed, out_dir=out, workers=_workers(run))
        print(f"seed {seed}: {res.episodes_done} episodes, {res.updates_done} updates, "
              f"{res.cycles} cycles -> {out}")
    return EXIT_OK


def _cycle_episodes(run_dir):
    """Episodes completed when each cycle's checkpoint was written, from metrics.csv."""
    done = {0: 0}
    path = os.path.join(run_dir, "metrics.csv")
    if os.path.exists(path):
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                done[int(row["cycle"]) + 1] = int(row["episodes_done"])
    return done


def cmd_eval(args) -> int:
    run = _load_config(args)
    if args.dry_run:
        sys.stdout.write(run.resolved_text())
        return EXIT_OK
    out = run.out_dir
    _prepare_out(out, run)
    workers = _workers(run)
    ics = baseline_ics(run.task, run.grid, run.ddp, workers)
    target = args.checkpoint
    if os.path.isdir(target):
        files = sorted(glob.glob(os.path.join(target, "checkpoints", "actor_cycle*.csl1")))
        if not files:
            raise FileNotFoundError(f"no actor checkpoints under {target}")
        episodes = _cycle_episodes(target)
        eps, costs = [], []
        for path in files:
            cycle = int(re.search(r"actor_cycle(\d+)", path).group(1))
            res = evaluate_policy(run.task, load_checkpoint(path), run.grid, run.ddp, workers)
            eps.append(episodes.get(cycle, -1))
            costs.append(res.mean_cost)
            print(f"cycle {cycle}: episodes {eps[-1]} mean cost {res.mean_cost:.6g}")
        write_curve_csv(os.path.join(out, "curve.csv"), eps, costs)
        write_eval_csv(os.path.join(out, "eval_grid.csv"), res, ics, run.task)
    else:
        actor = load_checkpoint(target)
        if actor.d_in != run.task.n + 1 or actor.d_out != run.task.m:
            raise cfgmod.ConfigError(f"checkpoint {target} does not fit task {run.task.name}")
        res = evaluate_policy(run.task, actor, run.grid, run.ddp, workers)
        write_eval_csv(os.path.join(out, "eval_grid.csv"), res, ics, run.task)
    print(f"policy mean cost {res.mean_cost:.6g}, ICS mean cost {ics.mean_cost:.6g}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    run = _load_config(args, required=False)
    tasks = None if run is None else [run.task]
    results = gradcheck.run_all(seed=0 if args.seed is None else args.seed,
                                corrupt_jacobian=args.inject_fault == "jacobian", tasks=tasks,
                                quick=args.quick)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{r.name:<{width}}  {r.max_rel_err:.3e}  {'PASS' if r.passed else 'FAIL'}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERICAL


def cmd_compare(args) -> int:
    run = _load_config(args)
    if args.dry_run:
        sys.stdout.write(run.resolved_text())
        return EXIT_OK
    c = run.compare
    trainer = cfgmod.replace(run.trainer, k_s=c["k_s"])
    _prepare_out(run.out_dir, run)
    for seed in run.seeds:
        out = os.path.join(run.out_dir, f"seed_{seed}")
        _prepare_out(out, run)
        res = compare_activations(run.task, trainer, seed, c["activations"], c["checkpoints"],
                                  c["train_episodes"], c["heldout_episodes"], out,
                                  _workers(run), c["heatmap_mesh"])
        with open(os.path.join(out, "comparison.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["activation", "heldout_grad_loss", "heldout_value_loss"])
            for act in c["activations"]:
                w.writerow([act, repr(res.heldout_grad_loss[act]),
                            repr(res.heldout_value_loss[act])])
                print(f"seed {seed} {act}: held-out grad loss {res.heldout_grad_loss[act]:.6g}")
    return EXIT_OK


def cmd_ddp_solve(args) -> int:
    run = _load_config(args)
    x0 = args.x0 if args.x0 is not None else run.values["run.x0"]
    if x0 is None:
        x0 = 0.5 * (run.task.init_low + run.task.init_high)
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (run.task.n,):
        raise cfgmod.ConfigError(f"x0 must have {run.task.n} entries")
    if args.dry_run:
        sys.stdout.write(run.resolved_text())
        return EXIT_OK
    _prepare_out(run.out_dir, run)
    traj = ddp.solve(run.task, x0, settings=run.ddp, record_trace=True)
    traj.write_trace(os.path.join(run.out_dir, "ddp_trace.csv"))
    with open(os.path.join(run.out_dir, "trajectory.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        n, m = run.task.n, run.task.m
        w.writerow(["t"] + [f"x{i}" for i in range(n)] + [f"u{i}" for i in range(m)]
                   + [f"Vx{i}" for i in range(n)] + ["stage_cost"])
        for t in range(traj.horizon + 1):
            u = traj.U[t] if t < traj.horizon else np.full(m, np.nan)
            w.writerow([t] + [repr(float(v)) for v in (*traj.X[t], *u, *traj.Vx[t],
                                                       traj.costs[t])])
    print(f"status {traj.status} after {traj.iterations} iterations, cost {traj.cost:.8g}")
    if not traj.ok:
        return EXIT_NUMERICAL
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cactosl", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="run configuration file")
        sp.add_argument("--seed", type=int, help="override run.seeds with a single seed")
        sp.add_argument("--workers", type=int, help="worker processes (0 = all cores)")
        sp.add_argument("--out", help="override run.out_dir")
        sp.add_argument("--dry-run", action="store_true",
                        help="print the resolved configuration and exit")

    sp = sub.add_parser("train", help="train actor and critic for every listed seed")
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate an actor checkpoint or a run directory")
    common(sp)
    sp.add_argument("--checkpoint", required=True,
                    help="actor .csl1 file, or a run directory to evaluate every cycle")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("gradcheck", help="finite-difference checks of all derivatives")
    common(sp, config_required=False)
    sp.add_argument("--quick", action="store_true", help="fewer probe points")
    sp.add_argument("--inject-fault", choices=["jacobian"], help=argparse.SUPPRESS)
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("compare-activations", help="critic activation comparison")
    common(sp)
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("ddp-solve", help="single DDP solve with an iteration trace")
    common(sp)
    sp.add_argument("--x0", type=float, nargs="+", help="initial state")
    sp.set_defaults(func=cmd_ddp_solve)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except cfgmod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, ddp.BackwardPassError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
