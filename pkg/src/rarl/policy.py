"""Linear two-head stochastic policy standing in for the vision-language model.

For each item with feature row ``x`` the policy emits

* a value bin ``b ~ softmax((W x + c) / T)`` whose bin center is the predicted value;
* a position in the output list: the permutation is Plackett-Luce over scores
  ``s = w . x``, so the first emitted item is drawn with probability
  proportional to ``exp(s / T)`` and so on without replacement.

The output list is the predicted ascending order, so a high score means
"emit early", i.e. "predicted small".
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InconsistentAction
from .ordinal import ItemBatch, RankScale
from .response_format import THINK_PLACEHOLDER, ParsedResponse, parse_response, serialize_response

CHECKPOINT_MAGIC = b"RARLCKPT"
CHECKPOINT_VERSION = 1
DEFAULT_NUM_BINS = 21
DEFAULT_KL_CAP = 30.0


@dataclass
class PolicyParams:
    value_head: np.ndarray  # (K, d)
    value_bias: np.ndarray  # (K,)
    rank_head: np.ndarray  # (d,)
    bin_centers: np.ndarray  # (K,)
    temperature: float = 1.0

    def __post_init__(self):
        self.value_head = np.asarray(self.value_head, dtype=np.float64)
        self.value_bias = np.asarray(self.value_bias, dtype=np.float64)
        self.rank_head = np.asarray(self.rank_head, dtype=np.float64)
        self.bin_centers = np.asarray(self.bin_centers, dtype=np.float64)
        k, d = self.value_head.shape
        if k < 2 or self.bin_centers.shape != (k,) or self.value_bias.shape != (k,):
            raise ValueError("value head, bias and bin_centers disagree on K (need K >= 2)")
        if self.rank_head.shape != (d,):
            raise ValueError("rank_head must have length d")
        if np.any(np.diff(self.bin_centers) <= 0):
            raise ValueError("bin_centers must be strictly increasing")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")

    @property
    def num_bins(self) -> int:
        return self.value_head.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.value_head.shape[1]

    @property
    def num_params(self) -> int:
        k, d = self.value_head.shape
        return k * d + k + d

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.value_head.ravel(), self.value_bias, self.rank_head])

    def with_vector(self, vec: np.ndarray) -> "PolicyParams":
        k, d = self.value_head.shape
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.num_params,):
            raise ValueError(f"expected {self.num_params} parameters, got {vec.shape}")
        return PolicyParams(
            vec[: k * d].reshape(k, d).copy(),
            vec[k * d : k * d + k].copy(),
            vec[k * d + k :].copy(),
            self.bin_centers.copy(),
            self.temperature,
        )

    def copy(self) -> "PolicyParams":
        return self.with_vector(self.to_vector())

    def __eq__(self, other):
        if not isinstance(other, PolicyParams):
            return NotImplemented
        return (
            self.temperature == other.temperature
            and np.array_equal(self.bin_centers, other.bin_centers)
            and np.array_equal(self.to_vector(), other.to_vector())
        )


@dataclass(frozen=True)
class Action:
    """One joint action: a bin per item and the emitted order (0-based item rows)."""

    bins: tuple[int, ...]
    order: tuple[int, ...]


@dataclass
class Rollout:
    response: ParsedResponse
    action: Action
    log_prob: float
    value_dists: np.ndarray = field(repr=False)  # (N, K)
    rank_dists: list[np.ndarray] = field(repr=False)  # one per non-trivial PL step


def bin_centers_for(scale: RankScale, num_bins: int = DEFAULT_NUM_BINS) -> np.ndarray:
    return np.linspace(scale.value_lo, scale.value_hi, num_bins)


def init_policy(feature_dim, scale, num_bins=DEFAULT_NUM_BINS, temperature=1.0, init_scale=0.01, rng=None):
    rng = np.random.default_rng(rng)
    return PolicyParams(
        value_head=rng.normal(0.0, init_scale, size=(num_bins, feature_dim)),
        value_bias=np.zeros(num_bins),
        rank_head=rng.normal(0.0, init_scale, size=feature_dim),
        bin_centers=bin_centers_for(scale, num_bins),
        temperature=temperature,
    )


def collapsed_policy(feature_dim, scale, reachable_bins, num_bins=DEFAULT_NUM_BINS, suppress=25.0, temperature=1.0):
    """A policy whose value mass sits (uniformly) on ``reachable_bins`` only."""
    bias = np.full(num_bins, -float(suppress))
    bias[list(reachable_bins)] = 0.0
    return PolicyParams(
        value_head=np.zeros((num_bins, feature_dim)),
        value_bias=bias,
        rank_head=np.zeros(feature_dim),
        bin_centers=bin_centers_for(scale, num_bins),
        temperature=temperature,
    )


def _log_softmax(z: np.ndarray, axis=-1) -> np.ndarray:
    m = np.max(z, axis=axis, keepdims=True)
    shifted = z - m
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def value_log_probs(policy: PolicyParams, features: np.ndarray) -> np.ndarray:
    """(N, K) log-probabilities of each bin for each item."""
    z = (features @ policy.value_head.T + policy.value_bias) / policy.temperature
    return _log_softmax(z, axis=1)


def rank_scores(policy: PolicyParams, features: np.ndarray) -> np.ndarray:
    return features @ policy.rank_head


def _pl_step_log_probs(scores_in_order: np.ndarray, temperature: float) -> np.ndarray:
    """(N, N) matrix; row t holds log-probs of choosing each remaining item at step t.

    Entries for already-placed items are -inf.
    """
    n = len(scores_in_order)
    z = np.broadcast_to(scores_in_order / temperature, (n, n)).copy()
    z[np.tril_indices(n, -1)] = -np.inf
    return _log_softmax(z, axis=1)


def pl_log_prob(scores: np.ndarray, order, temperature: float = 1.0) -> float:
    s = np.asarray(scores, dtype=float)[list(order)]
    lp = _pl_step_log_probs(s, temperature)
    return float(np.sum(np.diag(lp)))


def _check_action(policy: PolicyParams, features: np.ndarray, action: Action):
    n = features.shape[0]
    if features.ndim != 2 or features.shape[1] != policy.feature_dim:
        raise InconsistentAction(f"features must be (N, {policy.feature_dim})")
    if len(action.bins) != n or sorted(action.order) != list(range(n)):
        raise InconsistentAction(f"action does not cover {n} items")
    if any(b < 0 or b >= policy.num_bins for b in action.bins):
        raise InconsistentAction(f"bin index outside 0..{policy.num_bins - 1}")


def sample_actions(policy: PolicyParams, features: np.ndarray, rng, count: int = 1) -> list[Action]:
    """Draw ``count`` joint actions with the Gumbel-max / Gumbel-top-k trick."""
    n = features.shape[0]
    vlp = value_log_probs(policy, features)
    s = rank_scores(policy, features) / policy.temperature
    g_val = rng.gumbel(size=(count, n, policy.num_bins))
    g_rank = rng.gumbel(size=(count, n))
    bins = np.argmax(vlp[None] + g_val, axis=2)
    orders = np.argsort(-(s[None] + g_rank), axis=1, kind="stable")
    return [Action(tuple(int(b) for b in bins[g]), tuple(int(o) for o in orders[g])) for g in range(count)]


def greedy_action(policy: PolicyParams, features: np.ndarray) -> Action:
    vlp = value_log_probs(policy, features)
    s = rank_scores(policy, features)
    bins = np.argmax(vlp, axis=1)
    order = np.argsort(-s, kind="stable")
    return Action(tuple(int(b) for b in bins), tuple(int(o) for o in order))


def action_entries(policy: PolicyParams, action: Action) -> list[tuple[int, float]]:
    return [(i + 1, float(policy.bin_centers[action.bins[i]])) for i in action.order]


def render_action(policy: PolicyParams, action: Action, think_text: str = THINK_PLACEHOLDER) -> str:
    return serialize_response(action_entries(policy, action), think_text)


def action_to_response(policy: PolicyParams, action: Action) -> ParsedResponse:
    n = len(action.bins)
    return parse_response(render_action(policy, action), range(1, n + 1))


def decision_distributions(policy: PolicyParams, features: np.ndarray, action: Action):
    """Value-bin distributions per item and PL distributions along the action's prefix."""
    _check_action(policy, features, action)
    value = np.exp(value_log_probs(policy, features))
    s = rank_scores(policy, features)[list(action.order)]
    lp = _pl_step_log_probs(s, policy.temperature)
    n = len(s)
    rank = [np.exp(lp[t, t:]) for t in range(n - 1)]
    return value, rank


def log_prob(policy: PolicyParams, features: np.ndarray, action: Action) -> float:
    _check_action(policy, features, action)
    vlp = value_log_probs(policy, features)
    lp_val = float(np.sum(vlp[np.arange(len(action.bins)), list(action.bins)]))
    return lp_val + pl_log_prob(rank_scores(policy, features), action.order, policy.temperature)


def log_prob_and_grad(policy: PolicyParams, features: np.ndarray, action: Action) -> tuple[float, np.ndarray]:
    """Joint log-probability and its exact gradient (flat, ``to_vector`` layout)."""
    _check_action(policy, features, action)
    t = policy.temperature
    n = features.shape[0]
    vlp = value_log_probs(policy, features)
    p = np.exp(vlp)
    rows = np.arange(n)
    bins = list(action.bins)
    resid = -p
    resid[rows, bins] += 1.0
    g_w = resid.T @ features / t
    g_b = resid.sum(axis=0) / t

    order = list(action.order)
    x_o = features[order]
    lp_rank = _pl_step_log_probs(x_o @ policy.rank_head, t)
    q = np.exp(lp_rank)
    g_r = (x_o.sum(axis=0) - q.sum(axis=0) @ x_o) / t

    lp = float(np.sum(vlp[rows, bins]) + np.sum(np.diag(lp_rank)))
    return lp, np.concatenate([g_w.ravel(), g_b, g_r])


def _categorical_kl_rows(logp: np.ndarray, logq: np.ndarray, mask: np.ndarray, cap: float):
    """Row-wise KL(p||q) over masked entries, clamped at ``cap``; also dKL/dlogits (pre-temperature scale)."""
    p = np.where(mask, np.exp(logp), 0.0)
    with np.errstate(invalid="ignore"):
        diff = np.where(mask & (p > 0), logp - logq, 0.0)
    kl = np.sum(p * diff, axis=1)
    clamped = ~(kl <= cap)
    kl = np.where(clamped, cap, kl)
    g = p * (diff - kl[:, None])
    g[clamped] = 0.0
    return kl, g


def kl_and_grad(policy: PolicyParams, ref: PolicyParams, features: np.ndarray, action: Action, cap: float = DEFAULT_KL_CAP):
    """Summed per-decision KL(policy || ref) along ``action``, decision count, and the gradient of the sum."""
    _check_action(policy, features, action)
    t = policy.temperature
    n = features.shape[0]
    vp, vq = value_log_probs(policy, features), value_log_probs(ref, features)
    kl_v, g_zv = _categorical_kl_rows(vp, vq, np.ones_like(vp, dtype=bool), cap)
    g_zv /= t
    g_w = g_zv.T @ features
    g_b = g_zv.sum(axis=0)

    order = list(action.order)
    x_o = features[order]
    rp = _pl_step_log_probs(x_o @ policy.rank_head, t)[: n - 1]
    rq = _pl_step_log_probs(x_o @ ref.rank_head, ref.temperature)[: n - 1]
    mask = np.isfinite(rp)
    kl_r, g_zr = _categorical_kl_rows(rp, rq, mask, cap)
    g_r = (g_zr.sum(axis=0) / t) @ x_o if n > 1 else np.zeros(policy.feature_dim)

    total = float(kl_v.sum() + kl_r.sum())
    return total, n + (n - 1), np.concatenate([g_w.ravel(), g_b, g_r])


def snap_to_bins(policy: PolicyParams, values) -> np.ndarray:
    """Index of the nearest bin center for each value (lower index on ties)."""
    v = np.asarray(values, dtype=float)
    return np.argmin(np.abs(v[:, None] - policy.bin_centers[None, :]), axis=1)


def canonical_truth_action(batch: ItemBatch, policy: PolicyParams) -> Action:
    bins = snap_to_bins(policy, batch.truths)
    return Action(tuple(int(b) for b in bins), tuple(i - 1 for i in batch.truth_perm))


def canonical_truth_response(batch: ItemBatch, policy: PolicyParams) -> tuple[ParsedResponse, Action]:
    """Ground-truth answer expressed in the policy's action space (values snapped to bins)."""
    action = canonical_truth_action(batch, policy)
    return action_to_response(policy, action), action


def sample_response(policy: PolicyParams, features: np.ndarray, rng) -> Rollout:
    action = sample_actions(policy, features, rng, 1)[0]
    value, rank = decision_distributions(policy, features, action)
    return Rollout(action_to_response(policy, action), action, log_prob(policy, features, action), value, rank)


def save_checkpoint(policy: PolicyParams, path) -> None:
    """Binary layout, little-endian: magic ``RARLCKPT``, u32 version, u32 d, u32 K,
    f64 temperature, then f64 arrays bin_centers[K], value_head[K*d] (row-major),
    value_bias[K], rank_head[d]."""
    k, d = policy.value_head.shape
    header = CHECKPOINT_MAGIC + struct.pack("<IIId", CHECKPOINT_VERSION, d, k, policy.temperature)
    body = b"".join(
        np.ascontiguousarray(a, dtype="<f8").tobytes()
        for a in (policy.bin_centers, policy.value_head, policy.value_bias, policy.rank_head)
    )
    Path(path).write_bytes(header + body)


def load_checkpoint(path) -> PolicyParams:
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path} is not a policy checkpoint")
    version, d, k, temperature = struct.unpack_from("<IIId", raw, 8)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    offset = 8 + struct.calcsize("<IIId")
    expected = offset + 8 * (k + k * d + k + d)
    if len(raw) != expected:
        raise ValueError(f"checkpoint has {len(raw)} bytes, expected {expected}")
    flat = np.frombuffer(raw, dtype="<f8", offset=offset).astype(np.float64)
    centers = flat[:k]
    head = flat[k : k + k * d].reshape(k, d)
    bias = flat[k + k * d : 2 * k + k * d]
    rank = flat[2 * k + k * d :]
    return PolicyParams(head.copy(), bias.copy(), rank.copy(), centers.copy(), temperature)
