"""Command-line entry point: ``rarl {train,eval,score,gen-data}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .errors import ConfigInvalid
from .harness import ExperimentConfig, run_experiment, score_file
from .metrics import evaluate
from .policy import load_checkpoint
from .rewards import RewardConfig
from .tasks import TaskSpec, dump_batches, generate


def _load_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigInvalid(f"cannot read {path}: {exc}") from exc


def _task_spec(path) -> TaskSpec:
    d = {k: v for k, v in _load_json(path).items() if not k.startswith("_")}
    try:
        return TaskSpec.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(f"{path}: {exc}") from exc


def _lambdas(text: str) -> tuple[float, float, float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected three comma-separated numbers")
    try:
        return tuple(float(p) for p in parts)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def cmd_train(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = replace(cfg, out_dir=args.out)
    result = run_experiment(cfg)
    print(json.dumps({"out_dir": str(result.out_dir), "final": result.final.to_dict()}, indent=2))
    return 0


def cmd_eval(args) -> int:
    policy = load_checkpoint(args.checkpoint)
    spec = _task_spec(args.task)
    if spec.feature_dim != policy.feature_dim:
        raise ConfigInvalid(f"task feature_dim {spec.feature_dim} != checkpoint {policy.feature_dim}")
    report = evaluate(policy, generate(spec), greedy=not args.sample, rng=args.seed)
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return 0


def cmd_score(args) -> int:
    l1, l2, l3 = args.lambdas
    cfg = RewardConfig(args.delta, l1, l2, l3)
    records, summary = score_file(args.responses, args.batches, cfg)
    out = sys.stdout if args.out == "-" else open(args.out, "w", encoding="utf-8")
    try:
        for rec in records:
            out.write(json.dumps(rec) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    print(json.dumps(summary, sort_keys=True), file=sys.stderr)
    return 0


def cmd_gen_data(args) -> int:
    spec = _task_spec(args.spec)
    dump_batches(generate(spec), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rarl", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run the two-stage schedule")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--out")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a generated task")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--task", required=True, help="TaskSpec JSON file")
    e.add_argument("--sample", action="store_true", help="sample instead of greedy decoding")
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("score", help="score logged responses against batches")
    s.add_argument("--responses", required=True)
    s.add_argument("--batches", required=True)
    s.add_argument("--delta", type=float, required=True)
    s.add_argument("--lambdas", type=_lambdas, default=(1.0, 1.0, 1.0))
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_score)

    g = sub.add_parser("gen-data", help="dump a synthetic task as JSONL")
    g.add_argument("--spec", required=True, help="TaskSpec JSON file")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except (ConfigInvalid, OSError, ValueError) as exc:
        print(f"rarl: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
