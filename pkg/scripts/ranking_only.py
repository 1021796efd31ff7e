"""Train with the ranking and format terms only (no regression term).

Reports tau on multi-item eval batches; MAE is printed for reference but is
not supervised here.
"""
import argparse
from dataclasses import replace

from rarl.harness import ExperimentConfig, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default="configs/ranking_only.json")
    ap.add_argument("--out")
    args = ap.parse_args()
    cfg = ExperimentConfig.load(args.config)
    if args.out:
        cfg = replace(cfg, out_dir=args.out)
    res = run_experiment(cfg)
    for name, rep in [("initial", res.initial), ("final", res.final)]:
        taus = ", ".join(f"tau{n}={t:.3f}" for n, t in rep.tau_by_n.items())
        print(f"{name}: {taus}, MAE={rep.mae:.2f}, format={rep.format_ok_rate:.3f}")


if __name__ == "__main__":
    main()
