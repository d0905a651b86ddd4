"""Command-line entry points.

Subcommands: run a matrix file, hp-sweep a config grid, run a single trial,
enumerate expressible formulas, re-emit heatmap/trace artifacts from results,
and the exact statistics (Clopper-Pearson, Fisher).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from importlib import resources
from pathlib import Path


from . import analysis, runner
from .arch import Family, build_architecture, enumerate_expressible
from .expr import to_string
from .targets import catalog_json, get_target, make_dataset
from .train import InitStrategy, TrainConfig, run_trial


def _load_json(path: str) -> dict:
    p = Path(path)
    if p.exists():
        return json.loads(p.read_text())
    preset = resources.files("shefftree").joinpath(f"presets/{path}")
    if preset.is_file():
        return json.loads(preset.read_text())
    candidates = resources.files("shefftree").joinpath(f"presets/{path}.json")
    if candidates.is_file():
        return json.loads(candidates.read_text())
    raise SystemExit(f"no such file or preset: {path}")


def cmd_run(args) -> int:
    doc = _load_json(args.matrix)
    if args.base_seed is not None:
        doc["base_seed"] = args.base_seed
    matrix = runner.ExperimentMatrix.from_dict(doc)
    bundle = runner.run_matrix(
        matrix, out_dir=args.out, workers=args.workers, progress=not args.quiet
    )
    for cell in matrix.cells:
        s, n = bundle.cell_counts(cell.cell_id, cell.config_id)
        print(f"{cell.cell_id} [{cell.config_id}]: {s}/{n}")
    return 0


def cmd_hp_sweep(args) -> int:
    doc = _load_json(args.config)
    if args.base_seed is not None:
        doc["base_seed"] = args.base_seed
    bundle = runner.run_hp_sensitivity(
        doc, out_dir=args.out, workers=args.workers, progress=not args.quiet
    )
    for cell in bundle.matrix.cells:
        s, n = bundle.cell_counts(cell.cell_id, cell.config_id)
        print(f"{cell.cell_id} [{cell.config_id}]: {s}/{n}")
    return 0


def cmd_trial(args) -> int:
    target = get_target(args.target)
    spec = build_architecture(Family(args.arch), args.depth, target.operator)
    dataset = make_dataset(target)
    config = TrainConfig(seed=args.seed, init_strategy=InitStrategy(args.init))
    if args.overrides:
        config = config.with_overrides(**json.loads(args.overrides))
    result = run_trial(spec, dataset, config, telemetry_path=args.telemetry)
    doc = dataclasses.asdict(result)
    doc["hardened"] = to_string(result.hardened)
    doc["init_strategy"] = result.init_strategy.value
    doc["trace"] = [dataclasses.asdict(s) for s in result.trace.samples]
    print(json.dumps(doc, indent=2))
    return 0


def cmd_enumerate(args) -> int:
    spec = build_architecture(Family(args.arch), args.depth, args.operator)
    exprs = sorted(enumerate_expressible(spec))
    print(f"# {args.arch} depth={args.depth} operator={args.operator}: "
          f"{len(exprs)} expressions")
    if not args.count_only:
        for e in exprs:
            print(e)
    return 0


def cmd_heatmap(args) -> int:
    runner.emit_heatmap(args.cells_csv, args.out, args.svg)
    print(f"wrote {args.out}" + (f" and {args.svg}" if args.svg else ""))
    return 0


def cmd_gradtrace(args) -> int:
    runner.emit_gradient_trace(args.traces_csv, args.cell, args.out, args.config_id)
    print(f"wrote {args.out}")
    return 0


def cmd_stats(args) -> int:
    if args.kind == "cp":
        if len(args.counts) != 2:
            raise SystemExit("cp needs: successes trials")
        low, high = analysis.clopper_pearson(*args.counts, args.confidence)
        print(json.dumps({"low": low, "high": high}))
    else:
        if len(args.counts) != 4:
            raise SystemExit("fisher needs: a b c d")
        print(json.dumps({"p": analysis.fisher_exact(*args.counts)}))
    return 0


def cmd_targets(args) -> int:
    print(catalog_json())
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="shefftree",
        description="Differentiable operator-tree symbolic regression experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment matrix (file or preset name)")
    p.add_argument("matrix")
    p.add_argument("--out", default=None, help="results directory")
    p.add_argument("--workers", type=int, default=None,
                   help=f"worker processes (default ${runner.WORKERS_ENV} or 1)")
    p.add_argument("--base-seed", type=int, default=None)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("hp-sweep", help="run a hyperparameter sensitivity grid")
    p.add_argument("config")
    p.add_argument("--out", default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--base-seed", type=int, default=None)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(fn=cmd_hp_sweep)

    p = sub.add_parser("trial", help="run one trial and print the result as JSON")
    p.add_argument("--arch", required=True, choices=[f.value for f in Family])
    p.add_argument("--target", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--init", default=InitStrategy.EQ6_PAPER.value,
                   choices=[s.value for s in InitStrategy])
    p.add_argument("--depth", type=int, default=3)
    p.add_argument("--telemetry", default=None,
                   help="write per-iteration telemetry CSV here")
    p.add_argument("--overrides", default=None,
                   help="JSON dict of TrainConfig overrides")
    p.set_defaults(fn=cmd_trial)

    p = sub.add_parser("enumerate", help="enumerate expressible formulas")
    p.add_argument("--arch", required=True, choices=[f.value for f in Family])
    p.add_argument("--depth", type=int, default=3)
    p.add_argument("--operator", default="eml", choices=["eml", "sml", "rml"])
    p.add_argument("--count-only", action="store_true")
    p.set_defaults(fn=cmd_enumerate)

    p = sub.add_parser("heatmap", help="emit recovery heatmap CSV (+SVG) from cells.csv")
    p.add_argument("cells_csv")
    p.add_argument("--out", required=True)
    p.add_argument("--svg", default=None)
    p.set_defaults(fn=cmd_heatmap)

    p = sub.add_parser("gradtrace", help="emit mean/se gradient-ratio trace for a cell")
    p.add_argument("traces_csv")
    p.add_argument("--cell", required=True)
    p.add_argument("--config-id", default="default")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gradtrace)

    p = sub.add_parser("stats", help="exact statistics")
    p.add_argument("kind", choices=["cp", "fisher"])
    p.add_argument("counts", type=int, nargs="+")
    p.add_argument("--confidence", type=float, default=0.95)
    p.set_defaults(fn=cmd_stats)

    p = sub.add_parser("targets", help="print the target catalog as JSON")
    p.set_defaults(fn=cmd_targets)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
