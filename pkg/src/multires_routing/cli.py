"""Command-line surface: dataset generation, clustering inspection, training,
evaluation, the consistency suite, classical solving, and SVG plots.

Exit codes: 0 success, 1 usage error, 2 data error (unreadable or inconsistent
files, invalid values), 3 internal error. Every subcommand is deterministic
given its flags and seed; wall-clock numbers appear only inside stats logs and
report timing fields.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .baselines import (
    TooLargeError,
    held_karp,
    nearest_neighbor,
    two_opt,
)
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .evaluation import evaluate, greedy_rollout, save_report, symmetry_suite
from .instances import (
    CVRP,
    TSP,
    InfeasibleSolutionError,
    ParseError,
    generate_clustered,
    generate_cvrp,
    generate_mixed,
    generate_uniform,
    instance_to_record,
    load_dataset,
    load_solutions,
    save_dataset,
    save_solutions,
    solution_cost,
)
from .multires import DegenerateHierarchyError, build_hierarchy
from .plotting import save_plots
from .training import TrainConfig, train

DATA_ERRORS = (
    ParseError,
    CheckpointError,
    InfeasibleSolutionError,
    DegenerateHierarchyError,
    TooLargeError,
    OSError,
    ValueError,
)


class _Parser(argparse.ArgumentParser):
    """argparse reserves exit code 2 for usage errors; here 1 means usage and
    2 means bad data, so the default is overridden."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# subcommands


def _cmd_generate(args) -> int:
    rng = np.random.default_rng(args.seed)
    out = []
    for i in range(args.count):
        name = f"{args.kind}-{args.dist}-{args.n}-{i}"
        if args.kind == CVRP:
            if args.dist != "uniform":
                raise ValueError("cvrp generation supports the uniform distribution only")
            out.append(generate_cvrp(args.n, rng, name=name))
        elif args.dist == "uniform":
            out.append(generate_uniform(args.n, rng, name=name))
        elif args.dist == "clustered":
            out.append(generate_clustered(args.n, args.nc, rng, name=name))
        else:
            out.append(generate_mixed(args.n, args.nc, rng, name=name))
    save_dataset(out, args.out)
    print(f"wrote {len(out)} {args.kind} instances to {args.out}")
    return 0


def _partition_record(partition) -> dict:
    return {
        "assignment": partition.assignment.tolist(),
        "centroids": partition.centroids.tolist(),
        "K": partition.K,
    }


def _cmd_cluster(args) -> int:
    dataset = load_dataset(getattr(args, "in"))
    rng = np.random.default_rng(args.seed)
    with open(args.out, "w", encoding="utf-8") as fh:
        for inst in dataset:
            hier = build_hierarchy(inst, args.k, args.levels, rng)
            rec = {
                "levels": [instance_to_record(g) for g in hier.levels],
                "links": [_partition_record(p) for p in hier.links],
                "degenerate_link": None
                if hier.degenerate_link is None
                else _partition_record(hier.degenerate_link),
            }
            fh.write(json.dumps(rec) + "\n")
    print(f"wrote {len(dataset)} hierarchies to {args.out}")
    return 0


_CONFIG_FLAGS = {
    "kind": "kind",
    "n": "n",
    "batch_size": "batch_size",
    "steps_per_epoch": "steps_per_epoch",
    "epochs": "epochs",
    "lr": "lr",
    "baseline": "baseline",
    "seed": "seed",
}


def _load_train_config(args) -> TrainConfig:
    values: dict = {}
    if args.config is not None:
        with open(args.config, "r", encoding="utf-8") as fh:
            try:
                values = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{args.config}: invalid JSON ({exc})") from exc
        if not isinstance(values, dict):
            raise ParseError(f"{args.config}: config must be a JSON object")
        known = {f.name for f in fields(TrainConfig)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ParseError(f"{args.config}: unknown config fields {unknown}")
    for field, attr in _CONFIG_FLAGS.items():
        override = getattr(args, attr)
        if override is not None:
            values[field] = override
    return TrainConfig(**values)


def _cmd_train(args) -> int:
    cfg = _load_train_config(args)
    start = {}
    if args.resume is not None:
        ck = load_checkpoint(args.resume)
        if ck.config is not None and ck.config != cfg:
            raise CheckpointError(
                "checkpoint was trained under a different config; resume with the same one"
            )
        start = {
            "params": ck.params,
            "baseline": ck.baseline,
            "adam": ck.adam,
            "start_epoch": ck.epoch,
        }
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "stats.log"

    with open(log_path, "a", encoding="utf-8") as log_fh:

        def log_fn(line: str) -> None:
            log_fh.write(line + "\n")

        def on_epoch(stats, params, baseline, adam) -> None:
            save_checkpoint(
                out_dir / f"epoch-{stats.epoch:04d}.ckpt",
                params,
                adam=adam,
                config=cfg,
                baseline=baseline,
                epoch=stats.epoch + 1,
                seed=cfg.seed,
            )
            log_fh.flush()

        result = train(cfg, log_fn=log_fn, on_epoch=on_epoch, **start)

    save_checkpoint(
        out_dir / "final.ckpt",
        result.params,
        adam=result.adam,
        config=cfg,
        baseline=result.baseline,
        epoch=cfg.epochs,
        seed=cfg.seed,
    )
    print(f"trained {cfg.epochs} epochs; checkpoints and stats.log in {out_dir}")
    return 0


def _cmd_eval(args) -> int:
    ck = load_checkpoint(args.ckpt)
    dataset = load_dataset(getattr(args, "in"))
    report = evaluate(
        ck.params,
        dataset,
        args.mode,
        samples=args.samples,
        reference=args.reference,
        seed=args.seed,
    )
    save_report(report, args.out)
    print(
        f"evaluated {len(report.rows)} instances: mean objective "
        f"{report.mean_objective:.6f}, mean gap {report.mean_gap:.6%}"
    )
    return 0


def _cmd_symmetry(args) -> int:
    ck = load_checkpoint(args.ckpt)
    dataset = load_dataset(getattr(args, "in"))
    report = symmetry_suite(ck.params, dataset, np.random.default_rng(args.seed))
    save_report(report, args.out)
    print(f"consistency {report.consistency:.2%} over {report.instances} instances")
    return 0


def _cmd_solve(args) -> int:
    dataset = load_dataset(getattr(args, "in"))
    params = None
    if args.method == "policy":
        if args.ckpt is None:
            raise ValueError("--method policy requires --ckpt")
        params = load_checkpoint(args.ckpt).params
    solutions = []
    extras = []
    for i, inst in enumerate(dataset):
        if args.method == "nn":
            sol = nearest_neighbor(inst)
        elif args.method == "2opt":
            sol = two_opt(inst, nearest_neighbor(inst))
        elif args.method == "heldkarp":
            sol, _ = held_karp(inst)
        else:
            if inst.kind != params.kind:
                raise ValueError(
                    f"checkpoint solves {params.kind} instances, dataset line {i + 1} is {inst.kind}"
                )
            sol, _ = greedy_rollout(params, inst)
        solutions.append(sol)
        extras.append({"index": i, "method": args.method, "objective": solution_cost(inst, sol)})
    save_solutions(solutions, args.out, extras)
    mean = float(np.mean([e["objective"] for e in extras]))
    print(f"solved {len(solutions)} instances with {args.method}: mean objective {mean:.6f}")
    return 0


def _hierarchy_assignments(path, dataset) -> list:
    """City-cluster colors per instance: the partition of the original level."""
    assignments = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                link = rec["links"][-1] if rec["links"] else rec["degenerate_link"]
                assignments.append(None if link is None else np.asarray(link["assignment"]))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ParseError(f"{path}:{lineno}: bad hierarchy record ({exc})") from exc
    if len(assignments) != len(dataset):
        raise ParseError(
            f"{path}: {len(assignments)} hierarchies for {len(dataset)} instances"
        )
    return assignments


def _cmd_plot(args) -> int:
    dataset = load_dataset(getattr(args, "in"))
    solutions = None
    if args.solutions is not None:
        solutions = load_solutions(args.solutions)
        if len(solutions) != len(dataset):
            raise ParseError(
                f"{args.solutions}: {len(solutions)} solutions for {len(dataset)} instances"
            )
    assignments = None
    if args.hierarchy is not None:
        assignments = _hierarchy_assignments(args.hierarchy, dataset)
    paths = save_plots(dataset, args.out, solutions, assignments)
    print(f"wrote {len(paths)} plots to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mrroute", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a JSONL dataset of fresh instances")
    p.add_argument("--kind", choices=(TSP, CVRP), default=TSP)
    p.add_argument("--n", type=int, required=True, help="cities per instance")
    p.add_argument("--count", type=int, required=True, help="number of instances")
    p.add_argument("--dist", choices=("uniform", "clustered", "mixed"), default="uniform")
    p.add_argument("--nc", type=int, default=5, help="cluster centers for clustered/mixed")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("cluster", help="build and serialize multiresolution hierarchies")
    p.add_argument("--in", required=True, help="input dataset (JSONL)")
    p.add_argument("--k", type=int, default=5, help="clusters per level")
    p.add_argument("--levels", type=int, default=2, help="hierarchy levels incl. the original")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_cluster)

    p = sub.add_parser("train", help="train a policy; JSON config, flags override")
    p.add_argument("--config", help="JSON file mirroring the training config fields")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--out-dir", default="train-out", help="checkpoints + stats.log location")
    p.add_argument("--kind", choices=(TSP, CVRP))
    p.add_argument("--n", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--steps-per-epoch", type=int, dest="steps_per_epoch")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--baseline", choices=("greedy_rollout", "pomo_shared"))
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="objective/gap report for a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", required=True)
    p.add_argument("--mode", choices=("greedy", "sample"), default="greedy")
    p.add_argument("--samples", type=int, default=1280)
    p.add_argument("--reference", choices=("auto", "heldkarp", "heuristic"), default="auto")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="CSV path (JSON aggregate written next to it)")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("symmetry", help="rotation/translation/scaling consistency suite")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="CSV path (JSON aggregate written next to it)")
    p.set_defaults(func=_cmd_symmetry)

    p = sub.add_parser("solve", help="classical or policy solutions for a dataset")
    p.add_argument("--method", choices=("nn", "2opt", "heldkarp", "policy"), required=True)
    p.add_argument("--in", required=True)
    p.add_argument("--ckpt", help="policy checkpoint (required for --method policy)")
    p.add_argument("--out", required=True, help="solutions file (JSONL)")
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("plot", help="one SVG per instance")
    p.add_argument("--in", required=True)
    p.add_argument("--solutions", help="solutions file to draw (JSONL)")
    p.add_argument("--hierarchy", help="cluster file for city colors (from `cluster`)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_plot)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage error (1) or --help (0)
        return int(exc.code or 0)
    try:
        return args.func(args)
    except DATA_ERRORS as exc:
        print(f"mrroute {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        raise
    except Exception as exc:  # pragma: no cover - defensive
        print(f"mrroute {args.command}: internal error: {exc!r}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
