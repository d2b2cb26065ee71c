"""Exact-vs-diffusion comparison: per-instance records, summary metrics and scaling buckets."""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Instance
from .diffusion.model import DenoiserModel, load_checkpoint
from .diffusion.sampling import sample
from .diffusion.schedule import cosine_schedule
from .exact import OPTIMAL, TIMED_OUT, solve_exact
from .scenarios import load_split

RECORDS_SCHEMA = "records.v1"
SUMMARY_SCHEMA = "summary.v1"
SCALING_SCHEMA = "scaling.v1"
RECORD_COLUMNS = ("instance_id", "solver", "status", "cost", "elapsed_s", "samples_drawn",
                  "feasible_samples", "best_feasible_cost", "num_clouds")
SOLVERS = ("exact", "diffusion")
FEASIBLE, NO_FEASIBLE = "Feasible", "NoFeasibleSample"


class MissingModel(FileNotFoundError):
    pass


class MissingDataset(FileNotFoundError):
    pass


class Empty(ValueError):
    pass


@dataclass(frozen=True)
class EvalRecord:
    instance_id: str
    solver: str
    status: str
    cost: float | None
    elapsed_s: float | None          # None when timing is switched off
    samples_drawn: int
    feasible_samples: int
    best_feasible_cost: float | None
    num_clouds: int

    def __post_init__(self):
        if self.solver not in SOLVERS:
            raise ValueError(f"unknown solver {self.solver!r}")
        if not 0 <= self.feasible_samples <= self.samples_drawn:
            raise ValueError("feasible_samples must lie in [0, samples_drawn]")
        if (self.best_feasible_cost is not None) != (self.feasible_samples > 0):
            raise ValueError("best_feasible_cost is present exactly when a feasible sample exists")


@dataclass(frozen=True)
class ScalingBucket:
    solver: str
    num_clouds: int
    mean_elapsed_s: float
    count: int


# --------------------------------------------------------------------------
# running


def load_inputs(manifest_path, checkpoint_path, split: str = "eval"):
    """Eval instances and model; missing paths raise errors that name them."""
    manifest_path, checkpoint_path = Path(manifest_path), Path(checkpoint_path)
    if not manifest_path.is_file():
        raise MissingDataset(f"dataset manifest not found: {manifest_path}")
    if not checkpoint_path.is_file():
        raise MissingModel(f"checkpoint not found: {checkpoint_path}")
    instances = load_split(manifest_path, split)
    model, extra = load_checkpoint(checkpoint_path)
    return instances, model, extra


def _instance_id(inst: Instance, k: int) -> str:
    return str(inst.meta.get("name", f"inst-{k:03d}"))


def evaluate_instance(inst: Instance, model: DenoiserModel, instance_id: str, exact_time_limit: float, K: int,
                      seed: int, T: int = 100, timing: bool = True) -> tuple[EvalRecord, EvalRecord]:
    C = inst.num_clouds
    ex = solve_exact(inst, time_limit=exact_time_limit)
    has = ex.cost is not None
    # timed-out runs enter the tables at the cap
    ex_elapsed = float(exact_time_limit) if ex.status == TIMED_OUT else ex.elapsed
    exact_rec = EvalRecord(instance_id, "exact", ex.status, ex.cost, ex_elapsed if timing else None,
                           1, int(has), ex.cost if has else None, C)

    t0 = time.perf_counter()
    res = sample(model, inst, K=K, schedule=cosine_schedule(T), seed=seed)
    elapsed = time.perf_counter() - t0
    n_feas = res.feasible_count
    best = res.best
    diff_rec = EvalRecord(instance_id, "diffusion", FEASIBLE if n_feas else NO_FEASIBLE, best.cost,
                          elapsed if timing else None, K, n_feas, best.cost if n_feas else None, C)
    return exact_rec, diff_rec


def run_evaluation(instances: list[Instance], model: DenoiserModel, exact_time_limit: float, K: int, seed: int,
                   T: int = 100, timing: bool = True) -> tuple[list[EvalRecord], list[tuple[str, float]]]:
    """Exact solve and best-of-K sampling on every instance.  Inputs are only read."""
    records = []
    for k, inst in enumerate(instances):
        records.extend(evaluate_instance(inst, model, _instance_id(inst, k), exact_time_limit, K, seed, T, timing))
    return records, summarize(records)


# --------------------------------------------------------------------------
# aggregation (from records only)


def _mean(xs):
    return float(np.mean(xs)) if len(xs) else math.nan


def summarize(records: list[EvalRecord]) -> list[tuple[str, float]]:
    """Headline metrics.  Cost comparison is restricted to instances the exact
    solver proved optimal and diffusion solved feasibly; timed-out instances are
    reported as their own subset."""
    ex = {r.instance_id: r for r in records if r.solver == "exact"}
    df = {r.instance_id: r for r in records if r.solver == "diffusion"}
    ids = sorted(set(ex) | set(df))
    solved = [i for i in ids if i in ex and ex[i].status == OPTIMAL]
    timed = [i for i in ids if i in ex and ex[i].status == TIMED_OUT]
    feas = [i for i in ids if i in df and df[i].feasible_samples > 0]
    common = [i for i in solved if i in feas]

    out = [
        ("instances", len(ids)),
        ("feasibility_rate", len(feas) / len(df) if df else math.nan),
        ("exact_optimal", len(solved)),
        ("exact_infeasible", sum(1 for r in ex.values() if r.status not in (OPTIMAL, TIMED_OUT))),
        ("exact_timed_out", len(timed)),
        ("mean_exact_cost", _mean([ex[i].cost for i in solved])),
        ("mean_diffusion_cost", _mean([df[i].best_feasible_cost for i in feas])),
        ("common_instances", len(common)),
        ("mean_exact_cost_common", _mean([ex[i].cost for i in common])),
        ("mean_diffusion_cost_common", _mean([df[i].best_feasible_cost for i in common])),
    ]
    a, b = out[-2][1], out[-1][1]
    out.append(("cost_ratio_common", b / a if common and a > 0 else math.nan))
    for s, table in (("exact", ex), ("diffusion", df)):
        times = [r.elapsed_s for r in table.values() if r.elapsed_s is not None]
        out.append((f"mean_elapsed_{s}", _mean(times)))
    t_ex = [ex[i].best_feasible_cost for i in timed if ex[i].best_feasible_cost is not None]
    t_df = [df[i].best_feasible_cost for i in timed if i in df and df[i].best_feasible_cost is not None]
    out += [
        ("timed_out_exact_incumbents", len(t_ex)),
        ("timed_out_mean_exact_incumbent_cost", _mean(t_ex)),
        ("timed_out_diffusion_feasible", len(t_df)),
        ("timed_out_mean_diffusion_cost", _mean(t_df)),
    ]
    return out


def summary_dict(summary) -> dict:
    return {k: v for k, v in summary}


def scaling_report(records: list[EvalRecord]) -> list[ScalingBucket]:
    """Mean elapsed time per (solver, cloud count)."""
    timed = [r for r in records if r.elapsed_s is not None]
    if not timed:
        raise Empty("no timed records to bucket")
    groups: dict[tuple[str, int], list[float]] = {}
    for r in timed:
        groups.setdefault((r.solver, r.num_clouds), []).append(r.elapsed_s)
    order = {s: k for k, s in enumerate(SOLVERS)}
    return [
        ScalingBucket(s, c, float(np.mean(v)), len(v))
        for (s, c), v in sorted(groups.items(), key=lambda kv: (order[kv[0][0]], kv[0][1]))
    ]


# --------------------------------------------------------------------------
# CSV


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def _write_csv(path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    Path(path).write_text(buf.getvalue())


def write_records(path, records: list[EvalRecord]) -> None:
    _write_csv(path, RECORD_COLUMNS, ([getattr(r, c) for c in RECORD_COLUMNS] for r in records))


def _opt_float(s: str):
    return None if s == "" else float(s)


def read_records(path) -> list[EvalRecord]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"records file not found: {path}")
    with path.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and set(RECORD_COLUMNS) - set(rows[0]):
        raise ValueError(f"{path}: missing columns {sorted(set(RECORD_COLUMNS) - set(rows[0]))}")
    return [
        EvalRecord(
            r["instance_id"], r["solver"], r["status"], _opt_float(r["cost"]), _opt_float(r["elapsed_s"]),
            int(r["samples_drawn"]), int(r["feasible_samples"]), _opt_float(r["best_feasible_cost"]),
            int(r["num_clouds"]),
        )
        for r in rows
    ]


def write_summary(path, summary) -> None:
    _write_csv(path, ("metric", "value"), summary)


def write_scaling(path, buckets: list[ScalingBucket]) -> None:
    _write_csv(path, ("solver", "num_clouds", "mean_elapsed_s", "count"),
               ((b.solver, b.num_clouds, b.mean_elapsed_s, b.count) for b in buckets))
