"""Command-line entry point: ``cnfdiff <subcommand> ...``.

Exit codes: 0 success, 1 domain error (bad file, infeasible input, ...),
2 usage error.  ``CNFDIFF_SEED`` overrides the default seed of every
subcommand that takes one.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import evaluation as ev
from .core import InstanceError, dumps_json, load_instance
from .diffusion.model import load_checkpoint, save_checkpoint
from .diffusion.sampling import sample
from .diffusion.schedule import cosine_schedule
from .diffusion.training import TrainConfig, make_examples, train
from .exact import DEFAULT_TIME_LIMIT, OPTIMAL, solve_exact
from .scenarios import GenerationFailed, generate_dataset, load_split, preset_configs, write_dataset

log = logging.getLogger("cnfdiff")


class DomainError(Exception):
    pass


def default_seed() -> int:
    raw = os.environ.get("CNFDIFF_SEED")
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise DomainError(f"CNFDIFF_SEED must be an integer, got {raw!r}")


def _write(path, text: str) -> None:
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)


# --------------------------------------------------------------------------
# subcommands


def cmd_generate(a) -> int:
    train_count = a.count if a.train_count is None else a.train_count
    insts = generate_dataset(preset_configs(a.preset, a.count), a.seed)
    path = write_dataset(a.out, insts, train_count, a.seed, a.preset)
    log.info("wrote %d instances, manifest %s", len(insts), path)
    return 0


def cmd_solve_exact(a) -> int:
    res = solve_exact(load_instance(a.instance), time_limit=a.time_limit)
    _write(a.out, dumps_json(res.to_json()))
    return 0


def cmd_train(a) -> int:
    hp = {}
    if a.hyperparams:
        hp = json.loads(Path(a.hyperparams).read_text())
    hp.setdefault("seed", a.seed)
    config = TrainConfig.from_dict(hp)
    insts = load_split(a.manifest, "train")
    pairs = []
    for inst in insts:
        res = solve_exact(inst, time_limit=a.label_time_limit)
        if res.status == OPTIMAL:
            pairs.append((inst, res.placement))
        else:
            log.warning("skipping %s: exact solver status %s", inst.meta.get("name"), res.status)
    if not pairs:
        raise DomainError("no training instance has an optimal label")
    model, train_log = train(make_examples(pairs), config)
    save_checkpoint(model, a.out, extra={"train_config": config.to_dict()})
    if a.log:
        _write(a.log, dumps_json(train_log))
    return 0


def _schedule_T(extra: dict) -> int:
    return int(extra.get("train_config", {}).get("T", 100))


def cmd_sample(a) -> int:
    if not Path(a.checkpoint).is_file():
        raise ev.MissingModel(f"checkpoint not found: {a.checkpoint}")
    model, extra = load_checkpoint(a.checkpoint)
    res = sample(model, load_instance(a.instance), K=a.k, schedule=cosine_schedule(_schedule_T(extra)), seed=a.seed)
    _write(a.out, res.dumps())
    return 0


def cmd_evaluate(a) -> int:
    insts, model, extra = ev.load_inputs(a.manifest, a.checkpoint, split=a.split)
    records, summary = ev.run_evaluation(insts, model, a.time_limit, a.k, a.seed, T=_schedule_T(extra),
                                         timing=not a.no_timing)
    Path(a.out).parent.mkdir(parents=True, exist_ok=True)
    ev.write_records(a.out, records)
    summary_path = a.summary or str(Path(a.out).with_suffix("")) + ".summary.csv"
    ev.write_summary(summary_path, summary)
    for k, v in summary:
        log.info("%s = %s", k, v)
    return 0


def cmd_report_scaling(a) -> int:
    buckets = ev.scaling_report(ev.read_records(a.records))
    ev.write_scaling(a.out, buckets)
    return 0


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cnfdiff", description="CNF placement: exact solver vs diffusion sampler")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def seeded(sp):
        sp.add_argument("--seed", type=int, default=None, help="default 0, or $CNFDIFF_SEED")

    g = sub.add_parser("generate", help="write a seeded instance dataset")
    g.add_argument("--preset", required=True, help="tiny, small, medium, hard or hard-<clouds>")
    seeded(g)
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int, default=32)
    g.add_argument("--train-count", type=int, default=None, help="default: all instances")
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("solve-exact", help="branch-and-bound optimum of one instance")
    s.add_argument("--instance", required=True)
    s.add_argument("--time-limit", type=float, default=DEFAULT_TIME_LIMIT)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_solve_exact)

    t = sub.add_parser("train", help="train a denoiser on the manifest's train split")
    t.add_argument("--manifest", required=True)
    t.add_argument("--hyperparams", default=None, help="JSON file of training options")
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--log", default=None, help="training log path")
    t.add_argument("--label-time-limit", type=float, default=DEFAULT_TIME_LIMIT)
    seeded(t)
    t.set_defaults(func=cmd_train)

    m = sub.add_parser("sample", help="best-of-K diffusion sampling on one instance")
    m.add_argument("--checkpoint", required=True)
    m.add_argument("--instance", required=True)
    m.add_argument("--k", type=int, default=50)
    seeded(m)
    m.add_argument("--out", default=None)
    m.set_defaults(func=cmd_sample)

    e = sub.add_parser("evaluate", help="compare both solvers on a dataset split")
    e.add_argument("--manifest", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--k", type=int, default=50)
    e.add_argument("--time-limit", type=float, default=DEFAULT_TIME_LIMIT)
    e.add_argument("--out", required=True, help="records CSV")
    e.add_argument("--summary", default=None, help="summary CSV (default: <out>.summary.csv)")
    e.add_argument("--split", default="eval", choices=["train", "eval"])
    e.add_argument("--no-timing", action="store_true", help="leave elapsed times empty (byte-reproducible output)")
    seeded(e)
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("report-scaling", help="mean time per solver and cloud count")
    r.add_argument("--records", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report_scaling)
    return p


DOMAIN_ERRORS = (DomainError, InstanceError, GenerationFailed, FileNotFoundError, ValueError, KeyError,
                 json.JSONDecodeError)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if getattr(a, "seed", 0) is None:
            a.seed = default_seed()
        return a.func(a)
    except ev.Empty as e:
        print(f"cnfdiff {a.command}: error: {e}", file=sys.stderr)
        return 1
    except DOMAIN_ERRORS as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"cnfdiff {a.command}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
