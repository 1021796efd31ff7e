import pytest
from hypothesis import given, strategies as st

from rarl.response_format import parse_response, serialize_response
from rarl.rewards import (
    RewardConfig,
    accuracy_reward,
    consistency_reward,
    final_reward,
    length_reward,
    ranking_reward,
    regression_reward,
    regression_reward_item,
)

from conftest import make_batch


def respond(entries, ids):
    return parse_response(serialize_response(entries), ids)


@pytest.mark.parametrize(
    "pred, truth, delta, expected",
    [(30, 30, 5, 1.0), (35, 30, 5, 0.25), (25, 30, 5, 0.25), (36, 30, 5, 0.0), (32.5, 30, 5, 0.5625)],
)
def test_regression_item_examples(pred, truth, delta, expected):
    assert regression_reward_item(pred, truth, delta) == pytest.approx(expected, abs=1e-12)


dyadic = st.integers(-800, 800).map(lambda k: k / 8)


@given(dyadic, dyadic.map(abs), st.integers(1, 160).map(lambda k: k / 8))
def test_regression_item_symmetric(y, e, delta):
    # dyadic values keep y +/- e exact, so the tolerance boundary is hit exactly
    assert regression_reward_item(y + e, y, delta) == pytest.approx(regression_reward_item(y - e, y, delta), abs=1e-12)


@given(st.floats(0, 30), st.floats(0, 30), st.floats(0.01, 20))
def test_regression_item_monotone(e1, e2, delta):
    lo, hi = sorted((e1, e2))
    assert regression_reward_item(lo, 0.0, delta) >= regression_reward_item(hi, 0.0, delta)
    assert 0.0 <= regression_reward_item(lo, 0.0, delta) <= 1.0


def test_regression_reward_mean_over_all_items():
    batch = make_batch([30.0, 60.0])
    full = respond([(1, 30.0), (2, 60.0)], {1, 2})
    assert regression_reward(full, batch, 5.0)[1] == 1.0
    half = respond([(1, 30.0)], {1, 2})
    per_item, mean = regression_reward(half, batch, 5.0)
    assert per_item == (1.0, 0.0) and mean == 0.5
    bad = parse_response("garbage", {1, 2})
    assert regression_reward(bad, batch, 5.0)[1] == 0.0


@pytest.mark.parametrize("n_pred, n_truth, expected", [(4, 4, 1.0), (3, 4, 0.75), (5, 4, 0.0)])
def test_length_reward(n_pred, n_truth, expected):
    assert length_reward(list(range(n_pred)), list(range(n_truth))) == expected


def test_consistency_reward_examples():
    vals = [(1, 1.0), (2, 2.0), (3, 3.0)]
    assert consistency_reward([1, 2, 3], vals) == 1.0
    assert consistency_reward([3, 2, 1], vals) == 0.0
    assert consistency_reward([1, 3, 2], vals) == pytest.approx(2 / 3, abs=1e-12)
    assert consistency_reward([1], [(1, 1.0)]) == 0.0


def test_accuracy_reward_examples():
    assert accuracy_reward([1, 2, 3, 4], [1, 2, 3, 4]) == 1.0
    assert accuracy_reward([4, 3, 2, 1], [1, 2, 3, 4]) == 0.0
    assert accuracy_reward([2, 1, 3, 4], [1, 2, 3, 4]) == pytest.approx(5 / 6, abs=1e-12)
    # restricted to the common ids: [2, 3] vs [2, 3]
    assert accuracy_reward([3, 2], [1, 2, 3, 4]) == 0.0
    assert accuracy_reward([2], [1, 2]) == 0.0


def test_ranking_reward_examples():
    batch = make_batch([10.0, 20.0, 30.0])
    perfect = respond([(1, 10.0), (2, 20.0), (3, 30.0)], {1, 2, 3})
    assert ranking_reward(perfect, batch) == (1.0, 1.0, 1.0, 3.0)
    assert ranking_reward(parse_response("x", {1, 2, 3}), batch) == (0.0, 0.0, 0.0, 0.0)
    # values say 3 < 2 < 1 and the emitted order agrees, truth disagrees fully
    reversed_ = respond([(3, 10.0), (2, 20.0), (1, 30.0)], {1, 2, 3})
    assert ranking_reward(reversed_, batch) == (1.0, 1.0, 0.0, 2.0)


def test_final_reward_linear_combination():
    batch = make_batch([10.0, 40.0])
    # item 2 exact, item 1 far off; emitted order matches the values but not the truth
    pr = respond([(2, 40.0), (1, 90.0)], {1, 2})
    bd = final_reward(pr, batch, RewardConfig(5.0, 1, 1, 1))
    assert bd.reg == 0.5 and bd.rank == 2.0 and bd.format == 1.0
    assert bd.final == pytest.approx(3.5, abs=1e-12)


def test_final_reward_stage1_single_image():
    batch = make_batch([42.0])
    bd = final_reward(respond([(1, 42.0)], {1}), batch, RewardConfig(5.0, 1, 0, 1))
    assert bd.final == 2.0
    assert bd.consis == 0.0 and bd.acc == 0.0 and bd.len == 1.0


@pytest.mark.parametrize("lambdas", [(1, 1, 1), (0.3, 2, 5), (0, 0, 0)])
def test_final_reward_garbage_is_zero(lambdas):
    bd = final_reward(parse_response("<think>", {1, 2}), make_batch([1.0, 2.0]), RewardConfig(5.0, *lambdas))
    assert bd.final == 0.0


@st.composite
def scored(draw):
    n = draw(st.integers(1, 8))
    truths = draw(st.lists(st.floats(0, 100), min_size=n, max_size=n))
    k = draw(st.integers(1, n))
    ids = draw(st.permutations(list(range(1, n + 1))))[:k]
    vals = draw(st.lists(st.floats(0, 100), min_size=k, max_size=k))
    lambdas = draw(st.tuples(*[st.floats(0, 10)] * 3))
    delta = draw(st.floats(0.1, 30))
    return make_batch(truths), list(zip(ids, vals)), RewardConfig(delta, *lambdas)


@given(scored())
def test_breakdown_invariants(case):
    batch, entries, cfg = case
    bd = final_reward(respond(entries, range(1, batch.n + 1)), batch, cfg)
    assert 0 <= bd.reg <= 1 and 0 <= bd.rank <= 3 and bd.format in (0.0, 1.0)
    for v in (bd.len, bd.consis, bd.acc, *bd.per_item_reg):
        assert 0 <= v <= 1
    assert bd.rank == pytest.approx(bd.len + bd.consis + bd.acc, abs=1e-12)
    expect = cfg.lambda_reg * bd.reg + cfg.lambda_rank * bd.rank + cfg.lambda_format * bd.format
    assert bd.final == pytest.approx(expect, abs=1e-12)


@given(st.lists(st.floats(0, 100), min_size=2, max_size=8, unique=True), st.tuples(*[st.floats(0, 10)] * 3))
def test_truth_response_attains_global_max(truths, lambdas):
    batch = make_batch(truths)
    cfg = RewardConfig(5.0, *lambdas)
    value = dict(batch.items)
    pr = respond([(i, value[i]) for i in batch.truth_perm], range(1, batch.n + 1))
    assert final_reward(pr, batch, cfg).final == pytest.approx(cfg.lambda_reg + 3 * cfg.lambda_rank + cfg.lambda_format, abs=1e-12)


@given(st.permutations(list(range(1, 7))), st.permutations(list(range(1, 7))), st.permutations(list(range(1, 7))))
def test_rank_rewards_invariant_to_relabeling(a, b, relabel):
    m = dict(zip(range(1, 7), relabel))
    assert accuracy_reward(a, b) == accuracy_reward([m[i] for i in a], [m[i] for i in b])
    vals = [(i, float(r)) for r, i in enumerate(b)]
    assert consistency_reward(a, vals) == consistency_reward([m[i] for i in a], [(m[i], v) for i, v in vals])


@given(st.permutations(list(range(1, 7))), st.lists(st.integers(-50, 50), min_size=6, max_size=6))
def test_consistency_invariant_to_increasing_transform(perm, values):
    vals = [(i, float(v)) for i, v in zip(range(1, 7), values)]
    base = consistency_reward(perm, vals)
    assert consistency_reward(perm, [(i, 2 * v + 1) for i, v in vals]) == base
    assert consistency_reward(perm, [(i, v**3) for i, v in vals]) == base


def test_reward_config_validation():
    with pytest.raises(ValueError):
        RewardConfig(0.0)
    with pytest.raises(ValueError):
        RewardConfig(1.0, -1.0)
    assert RewardConfig.for_family("score_like").delta == 0.5
