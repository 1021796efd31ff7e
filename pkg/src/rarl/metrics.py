"""Benchmark-style evaluation: MAE / accuracy / SRCC on single items, tau on lists."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateInput, EmptyEvalSet
from .ordinal import ItemBatch, kendall_tau, spearman_rho
from .policy import PolicyParams, greedy_action, render_action, sample_actions
from .response_format import parse_response

Responder = Callable[[ItemBatch], str]


@dataclass(frozen=True)
class MetricsReport:
    mae: float
    accuracy: float
    srcc: float
    tau_by_n: dict[int, float]
    num_eval_batches: int
    format_ok_rate: float
    srcc_degenerate: bool = False
    num_single: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        if math.isnan(d["mae"]):
            d["mae"] = None  # no single-item batches evaluated
        d["tau_by_n"] = {str(k): v for k, v in self.tau_by_n.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        d = dict(d)
        if d["mae"] is None:
            d["mae"] = float("nan")
        d["tau_by_n"] = {int(k): v for k, v in d["tau_by_n"].items()}
        return cls(**d)


def policy_responder(policy: PolicyParams, greedy: bool = True, rng=None) -> Responder:
    """Render the policy's answer for a batch; greedy uses argmax bins and score order."""
    rng = np.random.default_rng(rng)

    def respond(batch: ItemBatch) -> str:
        if greedy:
            action = greedy_action(policy, batch.features)
        else:
            action = sample_actions(policy, batch.features, rng, 1)[0]
        return render_action(policy, action)

    return respond


def evaluate(policy, eval_batches: Sequence[ItemBatch], greedy: bool = True, rng=None) -> MetricsReport:
    """Score a policy (PolicyParams or a batch -> text callable) on ``eval_batches``.

    Unparseable answers count against ``format_ok_rate`` and are left out of
    the other metrics. Accuracy is an exact match after rounding to integers.
    When the single-item predictions (or truths) are constant, SRCC is
    reported as 0 with ``srcc_degenerate`` set.
    """
    if not eval_batches:
        raise EmptyEvalSet("no evaluation batches")
    respond = policy if callable(policy) else policy_responder(policy, greedy, rng)

    preds, truths = [], []
    taus: dict[int, list[float]] = {}
    ok = 0
    for batch in eval_batches:
        pr = parse_response(respond(batch), range(1, batch.n + 1))
        if not pr.format_ok:
            continue
        ok += 1
        if batch.n == 1:
            (iid, truth), = batch.items
            vals = pr.values
            if iid in vals:
                preds.append(vals[iid])
                truths.append(truth)
        else:
            common = set(pr.pred_perm)
            if len(common) >= 2:
                b = [i for i in batch.truth_perm if i in common]
                taus.setdefault(batch.n, []).append(kendall_tau(pr.pred_perm, b))
            else:
                taus.setdefault(batch.n, []).append(0.0)

    preds_a, truths_a = np.array(preds), np.array(truths)
    if len(preds):
        mae = float(np.mean(np.abs(preds_a - truths_a)))
        accuracy = float(np.mean(np.round(preds_a) == np.round(truths_a)))
    else:
        mae, accuracy = float("nan"), 0.0
    degenerate = False
    try:
        srcc = spearman_rho(preds, truths)
    except DegenerateInput:
        srcc, degenerate = 0.0, True
    return MetricsReport(
        mae=mae,
        accuracy=accuracy,
        srcc=srcc,
        tau_by_n={n: float(np.mean(v)) for n, v in sorted(taus.items())},
        num_eval_batches=len(eval_batches),
        format_ok_rate=ok / len(eval_batches),
        srcc_degenerate=degenerate,
        num_single=len(preds),
    )
