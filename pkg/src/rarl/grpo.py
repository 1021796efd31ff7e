"""Group-relative policy optimization with response mutation."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import DistributionMismatch, GroupTooSmall, NonFiniteGradient
from .ordinal import ItemBatch
from .policy import DEFAULT_KL_CAP, Action, PolicyParams, kl_and_grad, log_prob_and_grad
from .response_format import ParsedResponse
from .rewards import RewardBreakdown, RewardConfig, final_reward


@dataclass(frozen=True)
class GrpoConfig:
    group_size: int = 8
    kl_coeff: float = 0.01
    learning_rate: float = 1e-6
    batch_size: int = 64
    degenerate_eps: float = 1e-8
    rmo_k: int = 2
    rmo_enabled: bool = True
    rmo_p_degenerate: float = 1.0
    rmo_p_nondegenerate: float = 0.25
    kl_cap: float = DEFAULT_KL_CAP
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2")
        if not 0 <= self.rmo_k < self.group_size:
            raise ValueError("rmo_k must satisfy 0 <= k < group_size")
        if self.kl_coeff < 0 or not self.learning_rate > 0 or self.batch_size < 1:
            raise ValueError("need kl_coeff >= 0, learning_rate > 0, batch_size >= 1")
        if not self.degenerate_eps > 0:
            raise ValueError("degenerate_eps must be positive")
        for p in (self.rmo_p_degenerate, self.rmo_p_nondegenerate):
            if not 0.0 <= p <= 1.0:
                raise ValueError("mutation probabilities must lie in [0, 1]")


@dataclass
class ResponseGroup:
    batch_id: str
    responses: list[ParsedResponse]
    rewards: np.ndarray
    advantages: np.ndarray
    mutated: np.ndarray
    actions: list[Action] = field(default_factory=list)
    breakdowns: list[RewardBreakdown] = field(default_factory=list)
    features: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        g = len(self.responses)
        if g < 2:
            raise GroupTooSmall(f"group needs >= 2 responses, got {g}")
        if not (len(self.rewards) == len(self.advantages) == len(self.mutated) == g):
            raise ValueError("rewards/advantages/mutated must all have length G")
        if self.actions and len(self.actions) != g:
            raise ValueError("actions must have length G")

    @property
    def size(self) -> int:
        return len(self.responses)

    def is_degenerate(self, eps: float) -> bool:
        return float(np.std(self.rewards)) < eps


def group_advantages(rewards: Sequence[float], eps: float = 1e-8) -> np.ndarray:
    """Standardize rewards within the group using the population std.

    A group whose std falls below ``eps`` gets all-zero advantages.
    """
    r = np.asarray(rewards, dtype=float)
    if r.ndim != 1 or len(r) < 2:
        raise GroupTooSmall(f"group needs >= 2 rewards, got {r.shape}")
    std = float(np.std(r))
    if std < eps:
        return np.zeros_like(r)
    return (r - r.mean()) / std


def build_group(batch: ItemBatch, responses, actions, reward_cfg: RewardConfig, eps: float = 1e-8) -> ResponseGroup:
    breakdowns = [final_reward(pr, batch, reward_cfg) for pr in responses]
    rewards = np.array([b.final for b in breakdowns])
    return ResponseGroup(
        batch_id=batch.batch_id,
        responses=list(responses),
        rewards=rewards,
        advantages=group_advantages(rewards, eps),
        mutated=np.zeros(len(responses), dtype=bool),
        actions=list(actions),
        breakdowns=breakdowns,
        features=batch.features,
    )


def apply_rmo(group: ResponseGroup, batch: ItemBatch, cfg: GrpoConfig, cfg_r: RewardConfig, rng, payload, p_mut=None) -> ResponseGroup:
    """Replace up to ``k`` lowest-reward responses by the reference answer.

    ``payload`` is ``(ParsedResponse, Action)`` for the canonical ground-truth
    answer. Each of the ``k`` lowest responses (ties broken by index) is
    replaced independently with probability ``p_mut``; when ``p_mut`` is None
    it is ``cfg.rmo_p_degenerate`` for a zero-variance group and
    ``cfg.rmo_p_nondegenerate`` otherwise. Advantages are then recomputed over
    the post-mutation rewards.
    """
    k = cfg.rmo_k
    if k == 0:
        return group
    if p_mut is None:
        degenerate = group.is_degenerate(cfg.degenerate_eps)
        p_mut = cfg.rmo_p_degenerate if degenerate else cfg.rmo_p_nondegenerate
    lowest = sorted(range(group.size), key=lambda i: (group.rewards[i], i))[:k]
    # one draw per candidate regardless of p, so the stream position is p-independent
    draws = rng.random(len(lowest))
    chosen = [i for i, u in zip(lowest, draws) if u < p_mut]
    if not chosen:
        return group

    pr, action = payload
    bd = final_reward(pr, batch, cfg_r)
    responses = list(group.responses)
    actions = list(group.actions) if group.actions else [None] * group.size
    breakdowns = list(group.breakdowns) if group.breakdowns else [None] * group.size
    rewards = group.rewards.astype(float).copy()
    mutated = group.mutated.copy()
    for i in chosen:
        responses[i] = pr
        actions[i] = action
        breakdowns[i] = bd
        rewards[i] = bd.final
        mutated[i] = True
    return replace(
        group,
        responses=responses,
        rewards=rewards,
        advantages=group_advantages(rewards, cfg.degenerate_eps),
        mutated=mutated,
        actions=actions,
        breakdowns=breakdowns,
    )


def kl_penalty(policy_dists, ref_dists, cap: float = DEFAULT_KL_CAP) -> float:
    """Mean per-decision categorical KL(policy || ref), each term clamped at ``cap``."""
    if len(policy_dists) != len(ref_dists):
        raise DistributionMismatch("different number of decisions")
    if len(policy_dists) == 0:
        return 0.0
    total = 0.0
    for p, q in zip(policy_dists, ref_dists):
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        if p.shape != q.shape or p.ndim != 1:
            raise DistributionMismatch(f"decision shapes differ: {p.shape} vs {q.shape}")
        if abs(p.sum() - 1.0) > 1e-9 or abs(q.sum() - 1.0) > 1e-9 or (p < 0).any() or (q < 0).any():
            raise DistributionMismatch("distributions must be normalized and non-negative")
        on = p > 0
        if np.any(q[on] == 0):
            total += cap
            continue
        kl = float(np.sum(p[on] * (np.log(p[on]) - np.log(q[on]))))
        total += min(max(kl, 0.0), cap)
    return total / len(policy_dists)


class AdamW:
    """Adaptive moments with decoupled weight decay, written for gradient ascent."""

    def __init__(self, num_params, lr, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.lr, self.beta1, self.beta2, self.eps, self.weight_decay = lr, beta1, beta2, eps, weight_decay
        self.m = np.zeros(num_params)
        self.v = np.zeros(num_params)
        self.t = 0

    @classmethod
    def from_config(cls, num_params, cfg: GrpoConfig) -> "AdamW":
        return cls(num_params, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.weight_decay)

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        decayed = params - self.lr * self.weight_decay * params
        return decayed + self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass(frozen=True)
class StepStats:
    mean_reward: float
    mean_abs_adv: float
    grad_norm: float
    kl: float
    mutations: int
    degenerate_groups: int


def surrogate_objective(policy: PolicyParams, ref: PolicyParams, groups: Sequence[ResponseGroup], cfg: GrpoConfig):
    """Mean advantage-weighted log-likelihood minus ``beta`` times the mean KL.

    Returns ``(objective, gradient, mean_kl)``; the gradient is the estimator
    the update step ascends. Groups are reduced in list order.
    """
    grad_pg = np.zeros(policy.num_params)
    grad_kl = np.zeros(policy.num_params)
    obj_pg = 0.0
    kl_sum = 0.0
    n_decisions = 0
    n_responses = 0
    for group in groups:
        feats = group.features
        for adv, action in zip(group.advantages, group.actions):
            n_responses += 1
            if adv != 0.0:
                lp, g = log_prob_and_grad(policy, feats, action)
                obj_pg += adv * lp
                grad_pg += adv * g
            if cfg.kl_coeff > 0:
                kl, count, g_kl = kl_and_grad(policy, ref, feats, action, cfg.kl_cap)
                kl_sum += kl
                n_decisions += count
                grad_kl += g_kl
    if n_responses == 0:
        return 0.0, np.zeros(policy.num_params), 0.0
    kl_mean = kl_sum / n_decisions if n_decisions else 0.0
    grad = grad_pg / n_responses
    obj = obj_pg / n_responses
    if n_decisions:
        grad = grad - cfg.kl_coeff * grad_kl / n_decisions
        obj -= cfg.kl_coeff * kl_mean
    return obj, grad, kl_mean


def grpo_step(policy: PolicyParams, ref: PolicyParams, groups: Sequence[ResponseGroup], cfg: GrpoConfig, optimizer: AdamW):
    _, grad, kl = surrogate_objective(policy, ref, groups, cfg)
    grad_norm = float(np.linalg.norm(grad))
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradient(
            "policy gradient is not finite",
            {"grad_norm": grad_norm, "kl": kl, "num_groups": len(groups)},
        )
    new_policy = policy.with_vector(optimizer.step(policy.to_vector(), grad))
    rewards = np.concatenate([g.rewards for g in groups]) if groups else np.zeros(1)
    advs = np.concatenate([g.advantages for g in groups]) if groups else np.zeros(1)
    stats = StepStats(
        mean_reward=float(np.mean(rewards)),
        mean_abs_adv=float(np.mean(np.abs(advs))),
        grad_norm=grad_norm,
        kl=float(kl),
        mutations=int(sum(int(g.mutated.sum()) for g in groups)),
        degenerate_groups=int(sum(1 for g in groups if float(np.std(g.rewards)) < cfg.degenerate_eps)),
    )
    return new_policy, stats
