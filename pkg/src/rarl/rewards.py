"""Verifiable rewards: regression, ranking (length/consistency/accuracy), format."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

from .ordinal import ItemBatch, kendall_tau, order_by_value
from .response_format import ParsedResponse, format_reward

# ~5% of each family's label range; the tolerance is never reported so these are tunable
DEFAULT_DELTA = {"age_like": 5.0, "count_like": 1.0, "score_like": 0.5}

STAGE1_LAMBDAS = (1.0, 0.0, 1.0)
STAGE2_LAMBDAS = (1.0, 1.0, 1.0)


@dataclass(frozen=True)
class RewardConfig:
    delta: float = 5.0
    lambda_reg: float = 1.0
    lambda_rank: float = 1.0
    lambda_format: float = 1.0

    def __post_init__(self):
        if not (self.delta > 0 and math.isfinite(self.delta)):
            raise ValueError(f"delta must be positive and finite, got {self.delta}")
        for name in ("lambda_reg", "lambda_rank", "lambda_format"):
            lam = getattr(self, name)
            if not (math.isfinite(lam) and lam >= 0):
                raise ValueError(f"{name} must be finite and >= 0, got {lam}")

    @property
    def lambdas(self) -> tuple[float, float, float]:
        return (self.lambda_reg, self.lambda_rank, self.lambda_format)

    @classmethod
    def for_family(cls, family: str, lambdas=STAGE2_LAMBDAS) -> "RewardConfig":
        l1, l2, l3 = lambdas
        return cls(DEFAULT_DELTA[family], l1, l2, l3)

    def max_reward(self, n: int) -> float:
        """Reward of a perfect answer on an ``n``-item batch."""
        rank = 3.0 if n >= 2 else 1.0
        return self.lambda_reg + rank * self.lambda_rank + self.lambda_format


@dataclass(frozen=True)
class RewardBreakdown:
    per_item_reg: tuple[float, ...]
    reg: float
    len: float
    consis: float
    acc: float
    rank: float
    format: float
    final: float

    def log_fields(self) -> dict:
        d = asdict(self)
        d.pop("per_item_reg")
        return d


def regression_reward_item(pred: float, truth: float, delta: float) -> float:
    err = abs(pred - truth)
    if err > delta:
        return 0.0
    return (1.0 - err / (2.0 * delta)) ** 2


def regression_reward(pr: ParsedResponse, batch: ItemBatch, delta: float) -> tuple[tuple[float, ...], float]:
    """Per-item rewards over every ground-truth item; unanswered items score 0."""
    preds = pr.values if pr.format_ok else {}
    per_item = tuple(
        regression_reward_item(preds[iid], truth, delta) if iid in preds else 0.0
        for iid, truth in batch.items
    )
    return per_item, sum(per_item) / len(per_item)


def length_reward(pred_perm: Sequence[int], truth_perm: Sequence[int]) -> float:
    n_pred, n_truth = len(pred_perm), len(truth_perm)
    if n_pred > n_truth or n_truth == 0:
        return 0.0
    return 1.0 - (n_truth - n_pred) / n_truth


def _restricted_tau_reward(a: Sequence[int], b: Sequence[int]) -> float:
    common = set(a) & set(b)
    if len(common) < 2:
        return 0.0
    ra = [i for i in a if i in common]
    rb = [i for i in b if i in common]
    return (kendall_tau(ra, rb) + 1.0) / 2.0


def consistency_reward(pred_perm: Sequence[int], pred_values: Sequence[tuple[int, float]]) -> float:
    """Agreement between the emitted order and the order implied by the values."""
    if not pred_values:
        return 0.0
    return _restricted_tau_reward(pred_perm, order_by_value(pred_values))


def accuracy_reward(pred_perm: Sequence[int], truth_perm: Sequence[int]) -> float:
    return _restricted_tau_reward(pred_perm, truth_perm)


def ranking_reward(pr: ParsedResponse, batch: ItemBatch) -> tuple[float, float, float, float]:
    if not pr.format_ok:
        return 0.0, 0.0, 0.0, 0.0
    r_len = length_reward(pr.pred_perm, batch.truth_perm)
    r_con = consistency_reward(pr.pred_perm, pr.entries)
    r_acc = accuracy_reward(pr.pred_perm, batch.truth_perm)
    return r_len, r_con, r_acc, r_len + r_con + r_acc


def final_reward(pr: ParsedResponse, batch: ItemBatch, cfg: RewardConfig) -> RewardBreakdown:
    per_item, reg = regression_reward(pr, batch, cfg.delta)
    r_len, r_con, r_acc, rank = ranking_reward(pr, batch)
    fmt = format_reward(pr)
    final = cfg.lambda_reg * reg + cfg.lambda_rank * rank + cfg.lambda_format * fmt
    return RewardBreakdown(per_item, reg, r_len, r_con, r_acc, rank, fmt, final)
