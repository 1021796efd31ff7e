"""Compare training on a reward-uniform task with and without response mutation.

Without mutation every group has zero advantage, so the gradient is exactly
zero and the policy never moves. With mutation the reference answer enters
each group and learning starts on the first step.
"""
import argparse
import csv
import os
from dataclasses import replace

from rarl.harness import ExperimentConfig, run_experiment


def summarize(out_dir):
    with open(os.path.join(out_dir, "curve.csv"), newline="") as fh:
        rows = list(csv.DictReader(fh))
    zero = sum(float(r["grad_norm"]) == 0.0 for r in rows)
    first = next((int(r["step"]) for r in rows if float(r["grad_norm"]) > 0), None)
    return len(rows), zero, first, rows[-1]["mean_reward"]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default="configs/saddle.json")
    ap.add_argument("--out", default="runs/saddle")
    args = ap.parse_args()
    base = ExperimentConfig.load(args.config)
    for enabled in (False, True):
        tag = "rmo_on" if enabled else "rmo_off"
        cfg = replace(base, out_dir=os.path.join(args.out, tag), grpo=replace(base.grpo, rmo_enabled=enabled))
        res = run_experiment(cfg)
        steps, zero, first, last_reward = summarize(res.out_dir)
        print(f"{tag}: {zero}/{steps} steps with zero gradient, first nonzero step {first}, "
              f"last mean reward {float(last_reward):.3f}, final MAE {res.final.mae:.2f}")


if __name__ == "__main__":
    main()
