"""Seeded synthetic ordinal tasks.

Truth values are uniform on the family's label range. Each item's feature
vector is ``A @ base(u) + noise`` where ``u`` is the value rescaled to [0, 1],
``base(u) = [2u - 1, sin(pi j u), cos(pi j u) for j = 1..3]`` and ``A`` is a
fixed matrix with orthonormal columns drawn once per (family, feature_dim).

Per-batch randomness comes from ``numpy.random.SeedSequence([seed, index])``,
so batch ``index`` can be generated on its own and in any order.
"""
from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import ConstructionFailed
from .ordinal import ItemBatch, RankScale
from .policy import PolicyParams, sample_actions, action_to_response
from .rewards import RewardConfig, final_reward

FAMILY_SCALES = {
    "age_like": RankScale(101, 0.0, 100.0),
    "count_like": RankScale(51, 0.0, 50.0),
    "score_like": RankScale(10, 1.0, 10.0),
}
FAMILY_RULES = {
    "age_like": ("age", "0-100"),
    "count_like": ("number of objects", "0-50"),
    "score_like": ("aesthetic score", "1-10"),
}
NUM_FREQUENCIES = 3
BASE_DIM = 1 + 2 * NUM_FREQUENCIES


@dataclass(frozen=True)
class TaskSpec:
    family: str = "age_like"
    feature_dim: int = 16
    noise_sigma: float = 0.01
    batch_n: int = 1
    num_batches: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILY_SCALES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.feature_dim < 1 or self.batch_n < 1 or self.num_batches < 0:
            raise ValueError("feature_dim and batch_n must be >= 1, num_batches >= 0")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")

    @property
    def scale(self) -> RankScale:
        return FAMILY_SCALES[self.family]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TaskSpec":
        return cls(**d)


@lru_cache(maxsize=None)
def embedding_matrix(family: str, feature_dim: int) -> np.ndarray:
    """Fixed (feature_dim, BASE_DIM) mixing matrix; orthonormal columns when d >= BASE_DIM."""
    rng = np.random.default_rng(zlib.crc32(f"{family}:{feature_dim}".encode()))
    g = rng.normal(size=(max(feature_dim, BASE_DIM), BASE_DIM))
    q, _ = np.linalg.qr(g)
    a = q[:feature_dim]
    a.setflags(write=False)
    return a


def embed(family: str, values, feature_dim: int) -> np.ndarray:
    scale = FAMILY_SCALES[family]
    u = (np.asarray(values, dtype=float) - scale.value_lo) / scale.span
    cols = [2 * u - 1]
    for j in range(1, NUM_FREQUENCIES + 1):
        cols += [np.sin(np.pi * j * u), np.cos(np.pi * j * u)]
    return np.stack(cols, axis=1) @ embedding_matrix(family, feature_dim).T


def batch_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), int(index)]))


def make_batch(spec: TaskSpec, truths, rng, batch_id: str) -> ItemBatch:
    truths = np.asarray(truths, dtype=float)
    feats = embed(spec.family, truths, spec.feature_dim)
    if spec.noise_sigma > 0:
        feats = feats + rng.normal(0.0, spec.noise_sigma, size=feats.shape)
    return ItemBatch.from_truths(batch_id, truths, spec.scale, feats)


def generate_batch(spec: TaskSpec, index: int) -> ItemBatch:
    rng = batch_rng(spec.seed, index)
    scale = spec.scale
    truths = rng.uniform(scale.value_lo, scale.value_hi, size=spec.batch_n)
    return make_batch(spec, truths, rng, f"{spec.family}-n{spec.batch_n}-s{spec.seed}-{index}")


def generate(spec: TaskSpec) -> list[ItemBatch]:
    return [generate_batch(spec, i) for i in range(spec.num_batches)]


def saddle_task(
    spec: TaskSpec,
    policy: PolicyParams,
    reward_cfg: RewardConfig,
    group_size: int = 8,
    verify_groups: int = 200,
    min_degenerate: float = 0.99,
    reach_threshold: float = 1e-6,
    eps: float = 1e-8,
    max_tries: int = 1000,
) -> list[ItemBatch]:
    """Batches on which ``policy``'s sampled groups are (almost surely) reward-uniform.

    Truth values are placed on bin centers where the policy puts less than
    ``reach_threshold`` probability within ``delta`` of the truth, so the
    regression reward is unreachable. The construction is then checked by
    rolling out ``verify_groups`` groups; ConstructionFailed is raised if
    fewer than ``min_degenerate`` of them have zero reward variance.

    Use ``batch_n=1`` for ranking-weighted rewards: multi-item ranking terms
    vary with the sampled permutation and break degeneracy.
    """
    centers = policy.bin_centers
    scale = spec.scale
    batches = []
    for index in range(spec.num_batches):
        rng = batch_rng(spec.seed, index)
        truths, rows = [], []
        tries = 0
        while len(truths) < spec.batch_n:
            tries += 1
            if tries > max_tries:
                raise ConstructionFailed(
                    f"no bin center is unreachable for the policy within delta={reward_cfg.delta}"
                )
            y = float(rng.choice(centers[(centers >= scale.value_lo) & (centers <= scale.value_hi)]))
            x = embed(spec.family, [y], spec.feature_dim)[0]
            if spec.noise_sigma > 0:
                x = x + rng.normal(0.0, spec.noise_sigma, size=x.shape)
            logits = (policy.value_head @ x + policy.value_bias) / policy.temperature
            p = np.exp(logits - logits.max())
            p /= p.sum()
            mass = float(p[np.abs(centers - y) <= reward_cfg.delta].sum())
            if mass < reach_threshold:
                truths.append(y)
                rows.append(x)
        batch_id = f"saddle-{spec.family}-n{spec.batch_n}-s{spec.seed}-{index}"
        batches.append(ItemBatch.from_truths(batch_id, truths, scale, np.vstack(rows)))

    if not batches:
        return batches
    vrng = np.random.default_rng(np.random.SeedSequence([int(spec.seed), 0x5ADD1E]))
    degenerate = 0
    for g in range(verify_groups):
        batch = batches[g % len(batches)]
        actions = sample_actions(policy, batch.features, vrng, group_size)
        rewards = [final_reward(action_to_response(policy, a), batch, reward_cfg).final for a in actions]
        degenerate += float(np.std(rewards)) < eps
    if degenerate < min_degenerate * verify_groups:
        raise ConstructionFailed(
            f"only {degenerate}/{verify_groups} verification groups are degenerate"
        )
    return batches


def batch_to_record(batch: ItemBatch) -> dict:
    return {
        "batch_id": batch.batch_id,
        "scale": asdict(batch.scale),
        "ids": [i for i, _ in batch.items],
        "truths": [v for _, v in batch.items],
        "truth_perm": list(batch.truth_perm),
        "features": None if batch.features is None else batch.features.tolist(),
    }


def batch_from_record(rec: dict) -> ItemBatch:
    scale = RankScale(**rec["scale"])
    items = tuple(zip((int(i) for i in rec["ids"]), (float(v) for v in rec["truths"])))
    feats = rec.get("features")
    feats = None if feats is None else np.asarray(feats, dtype=float)
    return ItemBatch(str(rec["batch_id"]), items, tuple(int(i) for i in rec["truth_perm"]), scale, feats)


def dump_batches(batches, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for b in batches:
            fh.write(json.dumps(batch_to_record(b)) + "\n")


def load_batches(path) -> list[ItemBatch]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            out.append(batch_from_record(json.loads(line)))
    return out
