"""Run the default two-stage schedule and print before/after metrics.

    python3 scripts/run_two_stage.py [--config configs/default.json] [--out runs/default]
"""
import argparse
import json
import logging
from dataclasses import replace

from rarl.harness import ExperimentConfig, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", default="configs/default.json")
    ap.add_argument("--out")
    ap.add_argument("--seed", type=int)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = ExperimentConfig.load(args.config)
    if args.out:
        cfg = replace(cfg, out_dir=args.out)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    res = run_experiment(cfg)
    print(f"{'':10s} {'MAE':>8s} " + " ".join(f"tau{n:<4d}" for n in cfg.eval_ns if n > 1) + "  format")
    for name, rep in [("initial", res.initial), ("stage1", res.stage1), ("final", res.final)]:
        if rep is None:
            continue
        taus = " ".join(f"{rep.tau_by_n.get(n, float('nan')):7.3f}" for n in cfg.eval_ns if n > 1)
        print(f"{name:10s} {rep.mae:8.3f} {taus}  {rep.format_ok_rate:.3f}")
    print(f"artifacts in {res.out_dir}")


if __name__ == "__main__":
    main()
