"""Two-stage training schedule, run artifacts, and offline response scoring."""
from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .errors import ConfigInvalid
from .grpo import AdamW, GrpoConfig, StepStats, apply_rmo, build_group, grpo_step
from .metrics import MetricsReport, evaluate
from .ordinal import ItemBatch
from .policy import (
    PolicyParams,
    action_to_response,
    canonical_truth_response,
    collapsed_policy,
    init_policy,
    sample_actions,
    save_checkpoint,
)
from .response_format import parse_response
from .rewards import STAGE1_LAMBDAS, STAGE2_LAMBDAS, RewardConfig, final_reward
from .tasks import TaskSpec, generate, generate_batch, load_batches, saddle_task

log = logging.getLogger(__name__)

CURVE_FIELDS = [
    "step", "stage", "lambda_reg", "lambda_rank", "lambda_format",
    "mean_reward", "mean_abs_adv", "grad_norm", "kl", "mutations",
    "degenerate_groups", "eval_json",
]
REWARD_FIELDS = ["reg", "len", "consis", "acc", "rank", "format", "final"]


@dataclass(frozen=True)
class ExperimentConfig:
    """Run-level settings. ``task.batch_n``/``num_batches`` are ignored for training;
    ``train_ns`` and ``eval_ns`` pick the list lengths instead.

    ``grpo.batch_size`` counts prompts per step, each expanded to
    ``grpo.group_size`` sampled responses.
    """

    task: TaskSpec = field(default_factory=TaskSpec)
    stage1_reward: RewardConfig = field(default_factory=lambda: RewardConfig(5.0, *STAGE1_LAMBDAS))
    stage2_reward: RewardConfig = field(default_factory=lambda: RewardConfig(5.0, *STAGE2_LAMBDAS))
    # lr is raised from the 1e-6 used for billion-parameter models; linear heads need ~0.05
    grpo: GrpoConfig = field(default_factory=lambda: GrpoConfig(learning_rate=0.05))
    stage1_steps: int = 150
    stage2_steps: int = 150
    eval_every: int = 50
    seed: int = 42
    out_dir: str = "runs/default"
    num_bins: int = 21
    temperature: float = 1.0
    init_scale: float = 0.01
    train_ns: tuple[int, ...] = (1, 2, 4)
    eval_ns: tuple[int, ...] = (1, 2, 4, 8)
    eval_batches_per_n: int = 200
    log_responses_every: int = 50
    checkpoint_every: int = 0
    saddle: bool = False
    saddle_reachable_fraction: float = 0.5

    def __post_init__(self):
        if self.stage1_steps < 0 or self.stage2_steps < 0:
            raise ConfigInvalid("step counts must be >= 0")
        if self.eval_every < 0 or self.log_responses_every < 0 or self.checkpoint_every < 0:
            raise ConfigInvalid("intervals must be >= 0")
        if not self.train_ns or any(n < 1 for n in self.train_ns) or any(n < 1 for n in self.eval_ns):
            raise ConfigInvalid("train_ns must be non-empty and all list sizes >= 1")
        if self.num_bins < 2 or not self.temperature > 0:
            raise ConfigInvalid("need num_bins >= 2 and temperature > 0")
        if self.saddle and any(n != 1 for n in self.train_ns):
            raise ConfigInvalid("saddle runs need train_ns == (1,)")

    def reward_for_stage(self, stage: int) -> RewardConfig:
        return self.stage1_reward if stage == 1 else self.stage2_reward

    def to_dict(self) -> dict:
        d = asdict(self)
        d["train_ns"] = list(self.train_ns)
        d["eval_ns"] = list(self.eval_ns)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = {k: v for k, v in d.items() if not k.startswith("_")}
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigInvalid(f"unknown config keys: {sorted(unknown)}")
        try:
            kw = dict(d)
            if "task" in kw:
                kw["task"] = TaskSpec(**_strip(kw["task"]))
            family = kw.get("task", TaskSpec()).family
            for key, lambdas in (("stage1_reward", STAGE1_LAMBDAS), ("stage2_reward", STAGE2_LAMBDAS)):
                base = RewardConfig.for_family(family, lambdas)
                kw[key] = replace(base, **_strip(kw.get(key, {})))
            if "grpo" in kw:
                kw["grpo"] = GrpoConfig(**_strip(kw["grpo"]))
            for key in ("train_ns", "eval_ns"):
                if key in kw:
                    kw[key] = tuple(int(n) for n in kw[key])
            return cls(**kw)
        except ConfigInvalid:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigInvalid(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigInvalid(f"{path}: {exc}") from exc
        return cls.from_dict(d)


def _strip(d: dict) -> dict:
    # "_comment"-style keys annotate config files
    return {k: v for k, v in d.items() if not k.startswith("_")}


@dataclass
class RunResult:
    initial: MetricsReport
    stage1: MetricsReport | None
    final: MetricsReport
    curve: list[dict]
    policy: PolicyParams
    out_dir: Path


def worker_count() -> int:
    raw = os.environ.get("RARL_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigInvalid(f"RARL_THREADS must be an integer, got {raw!r}") from exc
    if n < 0:
        raise ConfigInvalid("RARL_THREADS must be >= 0")
    return n if n > 0 else (os.cpu_count() or 1)


def _task_for_n(cfg: ExperimentConfig, n: int, seed: int, num_batches: int = 0) -> TaskSpec:
    return replace(cfg.task, batch_n=n, num_batches=num_batches, seed=seed)


def train_seed(cfg: ExperimentConfig, n: int) -> int:
    return cfg.seed * 1000 + n


def eval_seed(cfg: ExperimentConfig, n: int) -> int:
    return cfg.seed * 1000 + 500 + n


def eval_set(cfg: ExperimentConfig) -> list[ItemBatch]:
    out = []
    for n in cfg.eval_ns:
        out += generate(_task_for_n(cfg, n, eval_seed(cfg, n), cfg.eval_batches_per_n))
    return out


def initial_policy(cfg: ExperimentConfig) -> PolicyParams:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0]))
    if cfg.saddle:
        reachable = range(int(round(cfg.num_bins * cfg.saddle_reachable_fraction)))
        return collapsed_policy(cfg.task.feature_dim, cfg.task.scale, reachable, cfg.num_bins, temperature=cfg.temperature)
    return init_policy(cfg.task.feature_dim, cfg.task.scale, cfg.num_bins, cfg.temperature, cfg.init_scale, rng)


class BatchStream:
    """Training batches addressed by a global prompt index."""

    def __init__(self, cfg: ExperimentConfig, policy: PolicyParams):
        self.cfg = cfg
        self.specs = {n: _task_for_n(cfg, n, train_seed(cfg, n)) for n in cfg.train_ns}
        self.saddle_batches = None
        if cfg.saddle:
            spec = _task_for_n(cfg, 1, train_seed(cfg, 1), max(cfg.grpo.batch_size, 64))
            self.saddle_batches = saddle_task(spec, policy, cfg.stage2_reward, cfg.grpo.group_size)

    def __call__(self, index: int) -> ItemBatch:
        if self.saddle_batches is not None:
            return self.saddle_batches[index % len(self.saddle_batches)]
        ns = self.cfg.train_ns
        return generate_batch(self.specs[ns[index % len(ns)]], index)


def rollout_group(policy, batch, reward_cfg, grpo_cfg, rng, use_rmo):
    """Sample a group, score it, optionally mutate. Returns (group, was_degenerate)."""
    actions = sample_actions(policy, batch.features, rng, grpo_cfg.group_size)
    responses = [action_to_response(policy, a) for a in actions]
    group = build_group(batch, responses, actions, reward_cfg, grpo_cfg.degenerate_eps)
    degenerate = group.is_degenerate(grpo_cfg.degenerate_eps)
    if use_rmo and grpo_cfg.rmo_k > 0:
        payload = canonical_truth_response(batch, policy)
        group = apply_rmo(group, batch, grpo_cfg, reward_cfg, rng, payload)
    return group, degenerate


def _fmt(x) -> str:
    return repr(float(x))


class RunWriter:
    """Single writer for every run artifact."""

    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        out_dir.mkdir(parents=True, exist_ok=True)
        self._curve = open(out_dir / "curve.csv", "w", newline="", encoding="utf-8")
        self._csv = csv.DictWriter(self._curve, fieldnames=CURVE_FIELDS, lineterminator="\n")
        self._csv.writeheader()
        self._responses = open(out_dir / "responses.jsonl", "w", encoding="utf-8")

    def curve_row(self, row: dict):
        self._csv.writerow(row)

    def responses(self, step, stage, group):
        for i, pr in enumerate(group.responses):
            rec = {
                "step": step,
                "stage": stage,
                "batch_id": group.batch_id,
                "raw_text": pr.raw_text,
                "mutated": bool(group.mutated[i]),
                "advantage": float(group.advantages[i]),
            }
            rec.update(group.breakdowns[i].log_fields())
            self._responses.write(json.dumps(rec) + "\n")

    def checkpoint(self, policy, name):
        save_checkpoint(policy, self.out_dir / f"ckpt-{name}.bin")

    def report(self, payload: dict):
        (self.out_dir / "report.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")

    def close(self):
        self._curve.close()
        self._responses.close()


def run_experiment(cfg: ExperimentConfig) -> RunResult:
    out_dir = Path(cfg.out_dir)
    writer = RunWriter(out_dir)
    (out_dir / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    try:
        return _run(cfg, writer)
    finally:
        writer.close()


def _run(cfg: ExperimentConfig, writer: RunWriter) -> RunResult:
    policy = initial_policy(cfg)
    ref = policy.copy()
    opt = AdamW.from_config(policy.num_params, cfg.grpo)
    stream = BatchStream(cfg, policy)
    evals = eval_set(cfg)
    workers = worker_count()
    pool = ThreadPoolExecutor(workers) if workers > 1 else None

    initial = evaluate(policy, evals)
    stage1_report = None
    curve = []
    writer.checkpoint(policy, f"{0:06d}")
    total = cfg.stage1_steps + cfg.stage2_steps
    b = cfg.grpo.batch_size
    try:
        for step in range(total):
            stage = 1 if step < cfg.stage1_steps else 2
            reward_cfg = cfg.reward_for_stage(stage)
            use_rmo = stage == 2 and cfg.grpo.rmo_enabled

            def one(j, step=step, reward_cfg=reward_cfg, use_rmo=use_rmo, policy=policy):
                rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1, step, j]))
                return rollout_group(policy, stream(step * b + j), reward_cfg, cfg.grpo, rng, use_rmo)

            results = list(pool.map(one, range(b))) if pool else [one(j) for j in range(b)]
            groups = [g for g, _ in results]
            policy, stats = grpo_step(policy, ref, groups, cfg.grpo, opt)

            if cfg.log_responses_every and step % cfg.log_responses_every == 0:
                writer.responses(step, stage, groups[0])

            done = step + 1
            eval_json = ""
            if cfg.eval_every and done % cfg.eval_every == 0 and done != total:
                eval_json = json.dumps(evaluate(policy, evals).to_dict(), sort_keys=True)
            if done == cfg.stage1_steps and cfg.stage2_steps > 0:
                stage1_report = evaluate(policy, evals)
                writer.checkpoint(policy, f"{done:06d}")
            if cfg.checkpoint_every and done % cfg.checkpoint_every == 0:
                writer.checkpoint(policy, f"{done:06d}")

            row = _curve_row(step, stage, reward_cfg, stats, sum(d for _, d in results), eval_json)
            writer.curve_row(row)
            curve.append(row)
            if step % 50 == 0:
                log.info("step %d stage %d reward %.4f |A| %.3f grad %.3g", step, stage,
                         stats.mean_reward, stats.mean_abs_adv, stats.grad_norm)
    finally:
        if pool:
            pool.shutdown()

    final = evaluate(policy, evals)
    writer.checkpoint(policy, "final")
    writer.report({
        "initial": initial.to_dict(),
        "stage1": None if stage1_report is None else stage1_report.to_dict(),
        "final": final.to_dict(),
        "config": cfg.to_dict(),
    })
    return RunResult(initial, stage1_report, final, curve, policy, writer.out_dir)


def _curve_row(step, stage, reward_cfg, stats: StepStats, degenerate_pre: int, eval_json: str) -> dict:
    return {
        "step": step,
        "stage": stage,
        "lambda_reg": _fmt(reward_cfg.lambda_reg),
        "lambda_rank": _fmt(reward_cfg.lambda_rank),
        "lambda_format": _fmt(reward_cfg.lambda_format),
        "mean_reward": _fmt(stats.mean_reward),
        "mean_abs_adv": _fmt(stats.mean_abs_adv),
        "grad_norm": _fmt(stats.grad_norm),
        "kl": _fmt(stats.kl),
        "mutations": stats.mutations,
        "degenerate_groups": degenerate_pre,
        "eval_json": eval_json,
    }


def score_file(responses_path, batches_path, reward_cfg: RewardConfig):
    """Score a JSONL of ``{batch_id, raw_text}`` records against a batch dump.

    Returns ``(records, summary)`` with one output record per input line.
    Malformed lines and unknown batch ids are scored 0 with an ``error``.
    """
    batches = {b.batch_id: b for b in load_batches(batches_path)}
    lines = Path(responses_path).read_text(encoding="utf-8").splitlines()
    records = []
    for lineno, line in enumerate(lines, 1):
        rec = {"line": lineno, "batch_id": None, "error": None}
        try:
            src = json.loads(line)
            if not isinstance(src, dict):
                raise ValueError("record is not a JSON object")
            rec["batch_id"] = src.get("batch_id")
            raw = src.get("raw_text")
            if not isinstance(raw, str):
                raise ValueError("missing raw_text")
            batch = batches.get(rec["batch_id"])
            if batch is None:
                raise KeyError(f"unknown batch_id {rec['batch_id']!r}")
        except (ValueError, KeyError) as exc:
            rec["error"] = str(exc)
            rec.update({k: 0.0 for k in REWARD_FIELDS})
            records.append(rec)
            continue
        pr = parse_response(raw, range(1, batch.n + 1))
        bd = final_reward(pr, batch, reward_cfg)
        rec["format_ok"] = pr.format_ok
        rec["parse_error"] = pr.parse_error
        rec.update(bd.log_fields())
        records.append(rec)

    count = len(records)
    summary = {"count": count, "errors": sum(1 for r in records if r["error"])}
    for k in REWARD_FIELDS:
        summary[f"mean_{k}"] = (sum(r[k] for r in records) / count) if count else 0.0
    return records, summary
