"""Experiment orchestration: expand a declarative matrix of (architecture,
operator, target) cells into seeded trials, run them across a worker pool, and
persist per-trial rows, per-cell rate summaries, and gradient-trace samples as
CSV.

Trial seeds derive deterministically from (base seed, cell id, seed index,
strategy index), so re-runs and any worker count reproduce byte-identical
files (wall time is never written).
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import multiprocessing
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .analysis import summarize_counts
from .arch import Family, build_architecture
from .expr import to_string
from .targets import get_target, make_dataset
from .train import (
    DEFAULT_SYMMETRIC_STRATEGIES,
    InitStrategy,
    TrainConfig,
    TrialResult,
    run_trial,
)

WORKERS_ENV = "SHEFFTREE_WORKERS"

TRIAL_COLUMNS = [
    "cell_id", "config_id", "architecture", "operator", "target", "shape",
    "leaves", "seed", "init_strategy", "recovered", "structural_match",
    "rmse", "final_loss", "hardened_formula", "ratio_at_1000",
]

CELL_COLUMNS = [
    "cell_id", "config_id", "architecture", "operator", "target",
    "successes", "trials", "rate", "ci_low", "ci_high",
]

TRACE_COLUMNS = [
    "cell_id", "config_id", "seed", "init_strategy", "iteration",
    "ratio", "grad_norm_x", "grad_norm_y",
]


def default_strategies(family: Family) -> tuple[InitStrategy, ...]:
    """Eq6 runs its published single initialization; the symmetric families
    run the four-strategy battery."""
    if family is Family.EQ6:
        return (InitStrategy.EQ6_PAPER,)
    return DEFAULT_SYMMETRIC_STRATEGIES


@dataclass(frozen=True)
class CellSpec:
    arch: Family
    operator: str
    target: str
    seeds: int
    init_strategies: tuple[InitStrategy, ...]
    depth: int = 3
    overrides: dict = field(default_factory=dict)
    config_id: str = "default"

    @property
    def cell_id(self) -> str:
        return f"{self.arch.value}:{self.operator}:{self.target}"

    @property
    def trials(self) -> int:
        return self.seeds * len(self.init_strategies)


@dataclass(frozen=True)
class ExperimentMatrix:
    name: str
    base_seed: int
    cells: tuple[CellSpec, ...]

    @staticmethod
    def from_dict(doc: dict) -> "ExperimentMatrix":
        cells = []
        defaults = doc.get("defaults", {})
        for raw in doc["cells"]:
            merged = {**defaults, **raw}
            fam = Family(merged["arch"])
            strategies = tuple(
                InitStrategy(s) for s in merged.get("init_strategies", ())
            ) or default_strategies(fam)
            cells.append(
                CellSpec(
                    arch=fam,
                    operator=merged["operator"],
                    target=merged["target"],
                    seeds=int(merged["seeds"]),
                    init_strategies=strategies,
                    depth=int(merged.get("depth", 3)),
                    overrides=dict(merged.get("config", {})),
                    config_id=str(merged.get("config_id", "default")),
                )
            )
        return ExperimentMatrix(
            name=str(doc.get("name", "experiment")),
            base_seed=int(doc.get("base_seed", 0)),
            cells=tuple(cells),
        )


def load_matrix(path) -> ExperimentMatrix:
    with open(path) as fh:
        return ExperimentMatrix.from_dict(json.load(fh))


def trial_seed(base_seed: int, cell_id: str, seed_index: int, strategy_index: int) -> int:
    """Stable 63-bit trial seed: base_seed xor sha256(cell, indices)."""
    digest = hashlib.sha256(
        f"{cell_id}|{seed_index}|{strategy_index}".encode()
    ).digest()
    return (int(base_seed) ^ int.from_bytes(digest[:8], "big")) & 0x7FFFFFFFFFFFFFFF


@dataclass(frozen=True)
class TrialJob:
    cell_index: int
    seed_index: int
    strategy_index: int
    cell: CellSpec
    seed: int
    strategy: InitStrategy


def _expand(matrix: ExperimentMatrix) -> list[TrialJob]:
    jobs = []
    for ci, cell in enumerate(matrix.cells):
        for si in range(cell.seeds):
            for ki, strategy in enumerate(cell.init_strategies):
                jobs.append(
                    TrialJob(
                        cell_index=ci,
                        seed_index=si,
                        strategy_index=ki,
                        cell=cell,
                        seed=trial_seed(matrix.base_seed, cell.cell_id, si, ki),
                        strategy=strategy,
                    )
                )
    return jobs


def _run_job(job: TrialJob) -> tuple[TrialJob, TrialResult]:
    cell = job.cell
    target = get_target(cell.target)
    spec = build_architecture(cell.arch, cell.depth, target.operator)
    dataset = make_dataset(target)
    config = TrainConfig(seed=job.seed, init_strategy=job.strategy).with_overrides(
        **cell.overrides
    )
    return job, run_trial(spec, dataset, config)


def resolve_workers(workers: int | None) -> int:
    if workers is not None and workers > 0:
        return workers
    env = os.environ.get(WORKERS_ENV, "")
    if env.strip():
        return max(1, int(env))
    return 1


@dataclass
class ResultsBundle:
    matrix: ExperimentMatrix
    results: list  # (TrialJob, TrialResult), in deterministic job order
    out_dir: Path | None = None

    def cell_results(self, cell_id: str, config_id: str = "default"):
        return [
            (j, r)
            for j, r in self.results
            if j.cell.cell_id == cell_id and j.cell.config_id == config_id
        ]

    def cell_counts(self, cell_id: str, config_id: str = "default"):
        rs = self.cell_results(cell_id, config_id)
        return sum(1 for _, r in rs if r.recovered), len(rs)


def _validate(matrix: ExperimentMatrix) -> None:
    for cell in matrix.cells:
        target = get_target(cell.target)  # raises KeyError if unresolvable
        if target.operator.value != cell.operator:
            raise ValueError(
                f"cell {cell.cell_id}: target {cell.target} uses operator "
                f"{target.operator.value!r}, not {cell.operator!r}"
            )
        build_architecture(cell.arch, cell.depth, target.operator)


def run_matrix(
    matrix: ExperimentMatrix,
    out_dir=None,
    workers: int | None = None,
    progress: bool = False,
) -> ResultsBundle:
    """Execute every trial in the matrix; aggregation is keyed by job indices,
    so results do not depend on completion order or worker count."""
    _validate(matrix)
    jobs = _expand(matrix)
    workers = resolve_workers(workers)
    results: dict[tuple, tuple[TrialJob, TrialResult]] = {}
    key = lambda j: (j.cell_index, j.seed_index, j.strategy_index)
    if workers > 1 and len(jobs) > 1:
        with multiprocessing.Pool(workers) as pool:
            for i, (job, res) in enumerate(
                pool.imap_unordered(_run_job, jobs, chunksize=1)
            ):
                results[key(job)] = (job, res)
                if progress:
                    print(
                        f"[{i + 1}/{len(jobs)}] {job.cell.cell_id} seed={job.seed_index}"
                        f" {job.strategy.value}: recovered={res.recovered}",
                        file=sys.stderr,
                        flush=True,
                    )
    else:
        for i, job in enumerate(jobs):
            job, res = _run_job(job)
            results[key(job)] = (job, res)
            if progress:
                print(
                    f"[{i + 1}/{len(jobs)}] {job.cell.cell_id} seed={job.seed_index}"
                    f" {job.strategy.value}: recovered={res.recovered}",
                    file=sys.stderr,
                    flush=True,
                )
    ordered = [results[key(j)] for j in jobs]
    bundle = ResultsBundle(matrix=matrix, results=ordered)
    if out_dir is not None:
        write_bundle(bundle, out_dir)
    return bundle


def write_bundle(bundle: ResultsBundle, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    matrix = bundle.matrix

    with open(out / "matrix.json", "w") as fh:
        json.dump(_matrix_to_dict(matrix), fh, indent=2, sort_keys=True)
        fh.write("\n")

    with open(out / "trials.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRIAL_COLUMNS)
        for job, res in bundle.results:
            cell = job.cell
            target = get_target(cell.target)
            sample = res.trace.at(1000)
            w.writerow(
                [
                    cell.cell_id,
                    cell.config_id,
                    cell.arch.value,
                    cell.operator,
                    cell.target,
                    target.shape.value,
                    "".join(target.leaves),
                    res.seed,
                    res.init_strategy.value,
                    int(res.recovered),
                    int(res.structural_match),
                    repr(float(res.rmse)),
                    repr(float(res.final_loss)),
                    to_string(res.hardened),
                    repr(float(sample.ratio)) if sample else "",
                ]
            )

    with open(out / "cells.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CELL_COLUMNS)
        for cell in matrix.cells:
            successes, trials = bundle.cell_counts(cell.cell_id, cell.config_id)
            summary = summarize_counts(successes, trials)
            w.writerow(
                [
                    cell.cell_id,
                    cell.config_id,
                    cell.arch.value,
                    cell.operator,
                    cell.target,
                    successes,
                    trials,
                    repr(summary.rate),
                    repr(summary.ci_low),
                    repr(summary.ci_high),
                ]
            )

    with open(out / "traces.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for job, res in bundle.results:
            for s in res.trace.samples:
                w.writerow(
                    [
                        job.cell.cell_id,
                        job.cell.config_id,
                        res.seed,
                        res.init_strategy.value,
                        s.iteration,
                        repr(float(s.ratio)),
                        repr(float(s.grad_norm_x)),
                        repr(float(s.grad_norm_y)),
                    ]
                )

    bundle.out_dir = out
    return out


def _matrix_to_dict(matrix: ExperimentMatrix) -> dict:
    return {
        "name": matrix.name,
        "base_seed": matrix.base_seed,
        "cells": [
            {
                "arch": c.arch.value,
                "operator": c.operator,
                "target": c.target,
                "seeds": c.seeds,
                "init_strategies": [s.value for s in c.init_strategies],
                "depth": c.depth,
                "config": c.overrides,
                "config_id": c.config_id,
            }
            for c in matrix.cells
        ],
    }


# ---------------------------------------------------------------------------
# hyperparameter sensitivity sweep


def hp_matrix_from_dict(doc: dict) -> ExperimentMatrix:
    """Expand an hp-sweep config (one cell x a grid of training configs) into
    a matrix.  The cell id stays config-free, so trial seeds pair across
    configurations."""
    fam = Family(doc["arch"])
    strategies = tuple(
        InitStrategy(s) for s in doc.get("init_strategies", ())
    ) or default_strategies(fam)
    cells = []
    for entry in doc["grid"]:
        overrides = dict(entry)
        config_id = "_".join(f"{k}={overrides[k]}" for k in sorted(overrides))
        cells.append(
            CellSpec(
                arch=fam,
                operator=doc["operator"],
                target=doc["target"],
                seeds=int(doc["seeds"]),
                init_strategies=strategies,
                depth=int(doc.get("depth", 3)),
                overrides=overrides,
                config_id=config_id or "default",
            )
        )
    return ExperimentMatrix(
        name=str(doc.get("name", "hp-sweep")),
        base_seed=int(doc.get("base_seed", 0)),
        cells=tuple(cells),
    )


def run_hp_sensitivity(doc: dict, out_dir=None, workers=None, progress=False) -> ResultsBundle:
    return run_matrix(hp_matrix_from_dict(doc), out_dir, workers, progress)


# ---------------------------------------------------------------------------
# artifact emission


def emit_heatmap(cells_csv, out_csv, out_svg=None) -> None:
    """Recovery-rate matrix: architecture rows x (operator, shape) columns,
    pooling every cell that matches; absent combinations print ``---``."""
    rows = list(csv.DictReader(open(cells_csv)))
    pooled: dict[tuple[str, str, str], list[int]] = {}
    for r in rows:
        target = get_target(r["target"])
        key = (r["architecture"], r["operator"], target.shape.value)
        agg = pooled.setdefault(key, [0, 0])
        agg[0] += int(r["successes"])
        agg[1] += int(r["trials"])
    archs = [f.value for f in Family]
    combos = sorted({(k[1], k[2]) for k in pooled})
    with open(out_csv, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["architecture"] + [f"{op}:{shape}" for op, shape in combos])
        for arch in archs:
            row = [arch]
            for op, shape in combos:
                agg = pooled.get((arch, op, shape))
                row.append("---" if agg is None else repr(agg[0] / agg[1]))
            w.writerow(row)
    if out_svg:
        _render_heatmap_svg(archs, combos, pooled, out_svg)


def _render_heatmap_svg(archs, combos, pooled, path) -> None:
    cw, ch, left, top = 86, 34, 90, 40
    width = left + cw * len(combos) + 10
    height = top + ch * len(archs) + 10
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="monospace" font-size="12">'
    ]
    for j, (op, shape) in enumerate(combos):
        parts.append(
            f'<text x="{left + j * cw + cw / 2}" y="{top - 10}" '
            f'text-anchor="middle">{op}:{shape}</text>'
        )
    for i, arch in enumerate(archs):
        parts.append(
            f'<text x="{left - 8}" y="{top + i * ch + ch / 2 + 4}" '
            f'text-anchor="end">{arch}</text>'
        )
        for j, combo in enumerate(combos):
            agg = pooled.get((arch, *combo))
            x, y = left + j * cw, top + i * ch
            if agg is None:
                fill, label = "#dddddd", "---"
            else:
                rate = agg[0] / agg[1]
                red = int(255 * (1 - rate))
                green = int(200 * rate + 40)
                fill = f"rgb({red},{green},80)"
                label = f"{100 * rate:.0f}%"
            parts.append(
                f'<rect x="{x}" y="{y}" width="{cw - 2}" height="{ch - 2}" '
                f'fill="{fill}" stroke="#555"/>'
            )
            parts.append(
                f'<text x="{x + (cw - 2) / 2}" y="{y + ch / 2 + 4}" '
                f'text-anchor="middle">{label}</text>'
            )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def emit_gradient_trace(traces_csv, cell_id, out_csv, config_id="default") -> None:
    """Per-iteration mean and standard error of the gradient ratio across the
    cell's trials."""
    rows = [
        r
        for r in csv.DictReader(open(traces_csv))
        if r["cell_id"] == cell_id and r["config_id"] == config_id
    ]
    if not rows:
        raise ValueError(f"no trace rows for cell {cell_id!r} ({config_id!r})")
    by_iter: dict[int, list[dict]] = {}
    for r in rows:
        by_iter.setdefault(int(r["iteration"]), []).append(r)
    with open(out_csv, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["iteration", "ratio_mean", "ratio_se", "grad_norm_x_mean",
             "grad_norm_y_mean", "n"]
        )
        for it in sorted(by_iter):
            grp = by_iter[it]
            ratios = [float(r["ratio"]) for r in grp]
            gx = [float(r["grad_norm_x"]) for r in grp]
            gy = [float(r["grad_norm_y"]) for r in grp]
            n = len(ratios)
            mean = sum(ratios) / n
            if n > 1 and all(math.isfinite(v) for v in ratios):
                var = sum((v - mean) ** 2 for v in ratios) / (n - 1)
                se = repr(math.sqrt(var / n))
            else:
                se = ""
            w.writerow(
                [it, repr(mean), se, repr(sum(gx) / n), repr(sum(gy) / n), n]
            )
