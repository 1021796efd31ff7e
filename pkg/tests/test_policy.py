import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rarl.errors import InconsistentAction
from rarl.grpo import kl_penalty
from rarl.ordinal import RankScale
from rarl.policy import (
    Action,
    PolicyParams,
    action_to_response,
    canonical_truth_response,
    decision_distributions,
    greedy_action,
    init_policy,
    kl_and_grad,
    load_checkpoint,
    log_prob,
    log_prob_and_grad,
    pl_log_prob,
    sample_actions,
    sample_response,
    save_checkpoint,
)
from rarl.response_format import parse_response
from rarl.rewards import RewardConfig, final_reward, regression_reward_item

from conftest import AGE, make_batch


def random_policy(rng, d=4, k=5, scale=AGE, temperature=1.0, weight=1.0):
    return PolicyParams(
        rng.normal(0, weight, (k, d)), rng.normal(0, weight, k), rng.normal(0, weight, d),
        np.linspace(scale.value_lo, scale.value_hi, k), temperature,
    )


def random_action(rng, n, k):
    return Action(tuple(int(b) for b in rng.integers(0, k, n)), tuple(int(i) for i in rng.permutation(n)))


def exact_pl_prob(scores, order):
    """Plackett-Luce probability as a plain product of ratios."""
    remaining = list(order)
    p = 1.0
    for item in order:
        p *= math.exp(scores[item]) / sum(math.exp(scores[j]) for j in remaining)
        remaining.remove(item)
    return p


def central_diff(f, x, h=1e-5):
    g = np.zeros_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


def test_equal_scores_give_uniform_permutations():
    for order in itertools.permutations(range(3)):
        assert pl_log_prob(np.zeros(3), order) == pytest.approx(-math.log(6), abs=1e-12)


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=6), st.floats(-50, 50), st.randoms())
def test_pl_shift_invariance(scores, c, r):
    order = list(range(len(scores)))
    r.shuffle(order)
    base = pl_log_prob(np.array(scores), order)
    assert pl_log_prob(np.array(scores) + c, order) == pytest.approx(base, abs=1e-9)
    assert math.exp(base) == pytest.approx(exact_pl_prob(scores, order), rel=1e-9)


def test_pl_sampling_frequencies_match_exact_probabilities():
    features = np.eye(3)
    policy = PolicyParams(np.zeros((2, 3)), np.zeros(2), np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0]))
    rng = np.random.default_rng(7)
    n = 60000
    counts = {}
    for a in sample_actions(policy, features, rng, n):
        counts[a.order] = counts.get(a.order, 0) + 1
    scores = [1.0, 0.0, 0.0]
    for order in itertools.permutations(range(3)):
        p = exact_pl_prob(scores, order)
        sigma = math.sqrt(p * (1 - p) / n)
        assert abs(counts.get(order, 0) / n - p) <= 3 * sigma, order


def test_value_bin_sampling_frequencies(rng):
    policy = random_policy(rng, d=2, k=4)
    x = rng.normal(size=(1, 2))
    probs = decision_distributions(policy, x, Action((0,), (0,)))[0][0]
    n = 40000
    bins = np.array([a.bins[0] for a in sample_actions(policy, x, np.random.default_rng(3), n)])
    for k, p in enumerate(probs):
        assert abs(np.mean(bins == k) - p) <= 3 * math.sqrt(p * (1 - p) / n)


def test_small_temperature_is_greedy(rng):
    policy = random_policy(rng, temperature=1e-4)
    x = rng.normal(size=(5, 4))
    greedy = greedy_action(policy, x)
    assert all(a == greedy for a in sample_actions(policy, x, rng, 50))
    assert log_prob(policy, x, greedy) == pytest.approx(0.0, abs=1e-6)


@pytest.mark.parametrize("case", range(10))
def test_log_prob_gradient_matches_finite_differences(case):
    rng = np.random.default_rng(100 + case)
    n = int(rng.integers(1, 6))
    policy = random_policy(rng, d=int(rng.integers(1, 6)), k=int(rng.integers(2, 7)), temperature=float(rng.uniform(0.5, 2)))
    x = rng.normal(size=(n, policy.feature_dim))
    action = random_action(rng, n, policy.num_bins)
    lp, g = log_prob_and_grad(policy, x, action)
    assert lp == pytest.approx(log_prob(policy, x, action), abs=1e-12)
    fd = central_diff(lambda v: log_prob(policy.with_vector(v), x, action), policy.to_vector())
    assert rel_err(g, fd) <= 1e-5


def test_uniform_policy_value_gradient_identity(rng):
    k, d, n = 4, 3, 2
    policy = PolicyParams(np.zeros((k, d)), np.zeros(k), np.zeros(d), np.arange(k, dtype=float))
    x = rng.normal(size=(n, d))
    action = Action((1, 3), (1, 0))
    _, g = log_prob_and_grad(policy, x, action)
    expected = sum(np.outer(np.eye(k)[b] - 1.0 / k, x[i]) for i, b in enumerate(action.bins))
    assert np.allclose(g[: k * d].reshape(k, d), expected, atol=1e-14)


def test_zero_features_give_zero_weight_gradients(rng):
    policy = random_policy(rng)
    x = np.zeros((3, 4))
    _, g = log_prob_and_grad(policy, x, random_action(rng, 3, 5))
    k, d = 5, 4
    assert np.all(g[: k * d] == 0) and np.all(g[k * d + k :] == 0)


@pytest.mark.parametrize("n, k", [(1, 2), (1, 4), (2, 3), (2, 4), (3, 2), (3, 4)])
def test_joint_action_space_normalizes(n, k):
    rng = np.random.default_rng(n * 10 + k)
    policy = random_policy(rng, d=3, k=k, temperature=0.7)
    x = rng.normal(size=(n, 3))
    total = sum(
        math.exp(log_prob(policy, x, Action(bins, order)))
        for bins in itertools.product(range(k), repeat=n)
        for order in itertools.permutations(range(n))
    )
    assert abs(total - 1.0) <= 1e-10


@given(st.integers(0, 2**32 - 1), st.integers(1, 8))
def test_sampled_actions_serialize_to_valid_format(seed, n):
    rng = np.random.default_rng(seed)
    policy = random_policy(rng, weight=3.0)
    x = rng.normal(size=(n, 4))
    roll = sample_response(policy, x, rng)
    assert roll.response.format_ok
    assert roll.response.pred_perm == tuple(i + 1 for i in roll.action.order)
    assert roll.log_prob == pytest.approx(log_prob(policy, x, roll.action), abs=1e-12)
    assert roll.value_dists.shape == (n, 5) and len(roll.rank_dists) == n - 1


def test_inconsistent_action_rejected(rng):
    policy = random_policy(rng)
    x = rng.normal(size=(2, 4))
    with pytest.raises(InconsistentAction):
        log_prob(policy, x, Action((0,), (0,)))
    with pytest.raises(InconsistentAction):
        log_prob(policy, x, Action((0, 9), (0, 1)))
    with pytest.raises(InconsistentAction):
        log_prob(policy, x, Action((0, 1), (0, 0)))


def test_canonical_truth_response():
    policy = init_policy(4, AGE, num_bins=21, rng=0)
    batch = make_batch([30.0, 50.0], features=np.zeros((2, 4)))
    pr, action = canonical_truth_response(batch, policy)
    assert pr.format_ok
    assert pr.entries == ((1, 30.0), (2, 50.0))
    assert action.order == (0, 1)


def test_canonical_snap_error_and_reward(rng):
    policy = init_policy(4, AGE, num_bins=21, rng=0)
    width = 5.0
    truths = [12.3, 47.9, 88.1]
    batch = make_batch(truths, features=np.zeros((3, 4)))
    pr, _ = canonical_truth_response(batch, policy)
    values = pr.values
    for iid, t in batch.items:
        assert abs(values[iid] - t) <= width / 2
    cfg = RewardConfig(5.0, 1.0, 1.0, 1.0)
    snap = np.mean([regression_reward_item(values[i], t, 5.0) for i, t in batch.items])
    assert final_reward(pr, batch, cfg).final == pytest.approx(snap + 3 + 1, abs=1e-12)


def test_kl_and_grad_matches_kl_penalty_and_finite_differences(rng):
    ref = random_policy(rng)
    policy = ref.with_vector(ref.to_vector() + rng.normal(0, 0.3, ref.num_params))
    x = rng.normal(size=(4, 4))
    action = random_action(rng, 4, 5)
    total, count, g = kl_and_grad(policy, ref, x, action)
    pv, pr = decision_distributions(policy, x, action)
    qv, qr = decision_distributions(ref, x, action)
    assert count == 7
    assert total / count == pytest.approx(kl_penalty(list(pv) + pr, list(qv) + qr), abs=1e-12)
    fd = central_diff(lambda v: kl_and_grad(policy.with_vector(v), ref, x, action)[0], policy.to_vector())
    assert rel_err(g, fd) <= 1e-5


def test_kl_zero_at_reference(rng):
    policy = random_policy(rng)
    total, _, g = kl_and_grad(policy, policy.copy(), rng.normal(size=(3, 4)), random_action(rng, 3, 5))
    assert total == 0.0 and np.all(g == 0.0)


def test_checkpoint_round_trip_is_bit_exact(tmp_path, rng):
    policy = random_policy(rng, d=7, k=9, temperature=0.8)
    path = tmp_path / "ckpt-test.bin"
    save_checkpoint(policy, path)
    loaded = load_checkpoint(path)
    assert loaded == policy
    assert loaded.to_vector().tobytes() == policy.to_vector().tobytes()
    save_checkpoint(loaded, tmp_path / "again.bin")
    assert (tmp_path / "again.bin").read_bytes() == path.read_bytes()


def test_checkpoint_rejects_garbage(tmp_path):
    bad = tmp_path / "x.bin"
    bad.write_bytes(b"not a checkpoint")
    with pytest.raises(ValueError):
        load_checkpoint(bad)


def test_policy_invariants():
    with pytest.raises(ValueError):
        PolicyParams(np.zeros((2, 1)), np.zeros(2), np.zeros(1), np.array([1.0, 0.0]))
    with pytest.raises(ValueError):
        PolicyParams(np.zeros((2, 1)), np.zeros(2), np.zeros(1), np.array([0.0, 1.0]), temperature=0.0)
    with pytest.raises(ValueError):
        PolicyParams(np.zeros((1, 1)), np.zeros(1), np.zeros(1), np.array([0.0]))
