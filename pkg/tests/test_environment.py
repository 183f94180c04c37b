import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dqad.environment import (
    ACTION_ANOMALOUS,
    ACTION_NORMAL,
    BoundaryBank,
    EnvConfig,
    FeaturePools,
    TrainingData,
    euclidean,
    exploit_anomalous,
    explore_normal,
    next_state,
    refresh_embeddings,
    resample_pools,
    reward,
    select_boundary_normals,
)
from dqad.errors import ConfigError, InputError, StateError
from dqad.features import AggregatedFeatureMap

from conftest import make_net


def identity_embed_net(dim):
    """Hidden layer = identity on nonnegative inputs, so embed(x) == x."""
    from dqad.qnet import QNetwork

    return QNetwork(
        [np.eye(dim), np.zeros((dim, 2))],
        [np.zeros(dim), np.zeros(2)],
        dtype=np.float64,
    )


def pools_from(normal_rows, anomalous_rows=None):
    anom = np.asarray(anomalous_rows if anomalous_rows is not None else [[9.0] * len(normal_rows[0])])
    return FeaturePools(
        anomalous=np.asarray(anom, dtype=np.float32),
        normal=np.asarray(normal_rows, dtype=np.float32),
    )


# ---------------------------------------------------------------------------
# reward table


@pytest.mark.parametrize(
    "action,gt,expected",
    [
        (ACTION_ANOMALOUS, 1, 1),
        (ACTION_NORMAL, 1, -1),
        (ACTION_ANOMALOUS, 0, -2),
        (ACTION_NORMAL, 0, 0),
    ],
)
def test_reward_table(action, gt, expected):
    assert reward(action, gt) == expected


def test_reward_table_is_total():
    values = {reward(a, g) for a in (0, 1) for g in (0, 1)}
    assert values == {1, -1, -2, 0}


def test_reward_rejects_bad_inputs():
    with pytest.raises(InputError):
        reward(2, 0)
    with pytest.raises(InputError):
        reward(0, -1)


# ---------------------------------------------------------------------------
# euclidean


def test_euclidean_zero_for_identical():
    x = np.array([1.0, 2.0, 3.0])
    assert euclidean(x, x) == 0.0


def test_euclidean_3_4_5():
    assert euclidean([0.0, 0.0], [3.0, 4.0]) == pytest.approx(5.0)


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=8))
def test_euclidean_symmetry(values):
    a = np.array(values)
    b = a[::-1].copy()
    assert euclidean(a, b) == euclidean(b, a)


def test_euclidean_dim_mismatch():
    with pytest.raises(InputError):
        euclidean([1.0], [1.0, 2.0])


# ---------------------------------------------------------------------------
# exploitation draw


def test_exploit_singleton_pool():
    pools = pools_from([[0.0, 0.0]], anomalous_rows=[[5.0, 5.0]])
    rng = np.random.default_rng(0)
    for _ in range(5):
        f = exploit_anomalous(pools, rng)
        assert np.array_equal(f.vector, [5.0, 5.0])
        assert f.gt == 1


def test_exploit_uniform_frequency():
    pools = pools_from([[0.0]], anomalous_rows=[[float(i)] for i in range(4)])
    rng = np.random.default_rng(2)
    counts = np.zeros(4)
    n = 40_000
    for _ in range(n):
        f = exploit_anomalous(pools, rng)
        counts[int(f.vector[0])] += 1
    assert np.max(np.abs(counts / n - 0.25)) < 0.02


def test_exploit_empty_pool_rejected():
    pools = FeaturePools(anomalous=np.zeros((0, 2), dtype=np.float32), normal=np.ones((1, 2), dtype=np.float32))
    with pytest.raises(StateError):
        exploit_anomalous(pools, np.random.default_rng(0))


# ---------------------------------------------------------------------------
# exploration draw


def test_explore_singleton_pool_both_actions():
    net = identity_embed_net(2)
    pools = pools_from([[1.0, 1.0]])
    refresh_embeddings(pools, net)
    for action in (ACTION_NORMAL, ACTION_ANOMALOUS):
        f = explore_normal(np.array([0.0, 0.0]), action, pools, net)
        assert np.array_equal(f.vector, [1.0, 1.0])
        assert f.gt == 0


def test_explore_nearest_vs_farthest():
    net = identity_embed_net(1)
    # distances from query 0: {1, 2, 9}
    pools = pools_from([[1.0], [2.0], [9.0]])
    refresh_embeddings(pools, net)
    query = np.array([0.0])
    near = explore_normal(query, ACTION_ANOMALOUS, pools, net)
    far = explore_normal(query, ACTION_NORMAL, pools, net)
    assert near.vector[0] == 1.0
    assert far.vector[0] == 9.0


def test_explore_tie_breaks_to_lowest_index():
    net = identity_embed_net(2)
    # two pool points equidistant from the query
    pools = pools_from([[1.0, 0.0], [0.0, 1.0], [5.0, 5.0]])
    refresh_embeddings(pools, net)
    pick = explore_normal(np.array([0.0, 0.0]), ACTION_ANOMALOUS, pools, net)
    assert np.array_equal(pick.vector, [1.0, 0.0])
    # farthest tie as well
    pools2 = pools_from([[3.0, 0.0], [0.0, 3.0], [1.0, 1.0]])
    refresh_embeddings(pools2, net)
    pick2 = explore_normal(np.array([0.0, 0.0]), ACTION_NORMAL, pools2, net)
    assert np.array_equal(pick2.vector, [3.0, 0.0])


def test_explore_requires_fresh_embeddings():
    net = identity_embed_net(2)
    pools = pools_from([[1.0, 1.0]])
    with pytest.raises(StateError):
        explore_normal(np.array([0.0, 0.0]), ACTION_NORMAL, pools, net)


def test_explore_matches_bruteforce_oracle(rng):
    net = make_net([4, 6, 3, 2], rng)
    for _ in range(50):
        pool = rng.normal(size=(int(rng.integers(1, 40)), 4))
        pools = pools_from(pool)
        refresh_embeddings(pools, net)
        query = rng.normal(size=4)
        q_emb = net.embed(query)
        dists = [euclidean(q_emb, net.embed(row)) for row in pools.normal]
        for action, pick_idx in (
            (ACTION_ANOMALOUS, int(np.argmin(dists))),
            (ACTION_NORMAL, int(np.argmax(dists))),
        ):
            got = explore_normal(query, action, pools, net)
            assert np.array_equal(got.vector, pools.normal[pick_idx])


def test_explore_exclude_self():
    net = identity_embed_net(1)
    pools = pools_from([[0.0], [5.0]])
    refresh_embeddings(pools, net)
    got = explore_normal(np.array([0.0]), ACTION_ANOMALOUS, pools, net, exclude_self=True)
    assert got.vector[0] == 5.0
    only_self = pools_from([[0.0]])
    refresh_embeddings(only_self, net)
    with pytest.raises(StateError):
        explore_normal(np.array([0.0]), ACTION_ANOMALOUS, only_self, net, exclude_self=True)


# ---------------------------------------------------------------------------
# mixing


def test_next_state_degenerate_betas():
    net = identity_embed_net(1)
    pools = pools_from([[1.0]], anomalous_rows=[[7.0]])
    refresh_embeddings(pools, net)
    rng = np.random.default_rng(0)
    always_exploit = EnvConfig(exploit_prob=1.0)
    always_explore = EnvConfig(exploit_prob=0.0)
    for _ in range(20):
        assert next_state(np.array([0.0]), 0, pools, net, always_exploit, rng).gt == 1
        assert next_state(np.array([0.0]), 0, pools, net, always_explore, rng).gt == 0


def test_next_state_mixing_ratio():
    net = identity_embed_net(1)
    pools = pools_from([[1.0]], anomalous_rows=[[7.0]])
    refresh_embeddings(pools, net)
    rng = np.random.default_rng(21)
    cfg = EnvConfig(exploit_prob=0.5)
    n = 40_000
    hits = sum(next_state(np.array([0.0]), 0, pools, net, cfg, rng).gt for _ in range(n))
    assert abs(hits / n - 0.5) < 0.02


# ---------------------------------------------------------------------------
# pool resampling


def synthetic_training_data(rng, n_normal=6, n_anomalous=2, h=4, w=4, c=3):
    normal = [
        AggregatedFeatureMap(rng.normal(size=(h, w, c)))
        for _ in range(n_normal)
    ]
    anomalous = []
    for _ in range(n_anomalous):
        mask = np.zeros((h, w), dtype=np.uint8)
        mask[:2, :2] = 1
        anomalous.append(AggregatedFeatureMap(rng.normal(size=(h, w, c)), mask))
    return TrainingData(normal=normal, anomalous=anomalous)


def test_resample_cap_enforced(rng):
    data = synthetic_training_data(rng, n_normal=5, h=4, w=4)
    cfg = EnvConfig(n_sample_images=5, pool_cap=10)
    pools = resample_pools(data, cfg, None, np.random.default_rng(0))
    assert len(pools.normal) == 10
    assert pools.normal_embeddings is None


def test_resample_single_anomalous_image_stable(rng):
    data = synthetic_training_data(rng, n_anomalous=1)
    cfg = EnvConfig(n_sample_images=3, pool_cap=100)
    a = resample_pools(data, cfg, None, np.random.default_rng(1))
    b = resample_pools(data, cfg, None, np.random.default_rng(2))
    assert np.array_equal(a.anomalous, b.anomalous)
    assert len(a.anomalous) == 4  # 2x2 mask block


def test_resample_requires_anomalous_image(rng):
    data = synthetic_training_data(rng)
    data.anomalous = []
    with pytest.raises(ConfigError):
        resample_pools(data, EnvConfig(), None, np.random.default_rng(0))


def test_resample_table_defaults_bounds(rng):
    # full-scale knobs on a small dataset: both bounds respected
    data = synthetic_training_data(rng, n_normal=100, h=4, w=4)
    cfg = EnvConfig(n_sample_images=80, pool_cap=100_000)
    pools = resample_pools(data, cfg, None, np.random.default_rng(3))
    assert len(pools.normal) == 80 * 16  # under the cap: everything kept
    assert len(pools.normal) <= 100_000


def test_resample_independent_of_bank_when_bs_off(rng):
    data = synthetic_training_data(rng)
    cfg = EnvConfig(n_sample_images=3, pool_cap=50, bs_enabled=False)
    bank = BoundaryBank(10)
    bank.add_from(np.ones((10, 3)))
    a = resample_pools(data, cfg, bank, np.random.default_rng(5))
    b = resample_pools(data, cfg, None, np.random.default_rng(5))
    assert np.array_equal(a.normal, b.normal)
    assert np.array_equal(a.anomalous, b.anomalous)


def test_resample_with_boundary_selection(rng):
    net = identity_embed_net(3)
    data = synthetic_training_data(rng)
    cfg = EnvConfig(n_sample_images=3, pool_cap=1000, bs_enabled=True, bank_size=8, boundary_k=5)
    bank = BoundaryBank(8)
    pools = resample_pools(data, cfg, bank, np.random.default_rng(6), net=net)
    assert len(bank) == 4  # filled from the chosen image's 4 anomalous features
    base = 3 * 16
    assert len(pools.normal) == base + 5  # k boundary rows appended


# ---------------------------------------------------------------------------
# boundary selection


def test_bs_select_returns_all_when_k_equals_n():
    net = identity_embed_net(1)
    bank = BoundaryBank(4)
    bank.add_from([[0.0]])
    normals = np.array([[5.0], [1.0], [3.0]], dtype=np.float32)
    got = select_boundary_normals(bank, normals, net, 3)
    assert np.array_equal(got.ravel(), [1.0, 3.0, 5.0])  # sorted by distance


def test_bs_select_k_closest():
    net = identity_embed_net(1)
    bank = BoundaryBank(4)
    bank.add_from([[0.0]])
    normals = np.array([[5.0], [1.0], [3.0]], dtype=np.float32)
    got = select_boundary_normals(bank, normals, net, 2)
    assert np.array_equal(got.ravel(), [1.0, 3.0])


def test_bs_select_duplicate_rows_tie_by_index():
    net = identity_embed_net(1)
    bank = BoundaryBank(4)
    bank.add_from([[0.0]])
    normals = np.array([[2.0], [2.0], [7.0]], dtype=np.float32)
    got = select_boundary_normals(bank, normals, net, 2)
    assert np.array_equal(got.ravel(), [2.0, 2.0])


def test_bs_select_matches_bruteforce(rng):
    net = make_net([3, 5, 2], rng)
    bank = BoundaryBank(6)
    bank.add_from(rng.normal(size=(6, 3)))
    normals = rng.normal(size=(30, 3))
    k = 7
    got = select_boundary_normals(bank, normals, net, k)

    bank_emb = [net.embed(r) for r in bank.matrix()]
    dmin = np.array(
        [min(euclidean(net.embed(nrow), b) for b in bank_emb) for nrow in normals]
    )
    expect = normals[np.argsort(dmin, kind="stable")[:k]]
    assert np.allclose(got, expect)


def test_bs_select_empty_bank_rejected():
    net = identity_embed_net(1)
    with pytest.raises(StateError):
        select_boundary_normals(BoundaryBank(4), np.ones((3, 1)), net, 1)


# ---------------------------------------------------------------------------
# embedding cache


def test_refresh_embeddings_matches_live_embed(rng):
    net = make_net([3, 4, 2], rng)
    pools = pools_from(rng.normal(size=(12, 3)))
    refresh_embeddings(pools, net)
    assert pools.embed_version == 1
    assert len(pools.normal_embeddings) == len(pools.normal)
    live = net.embed_batch(pools.normal)
    assert np.array_equal(pools.normal_embeddings, live)


def test_refresh_twice_identical(rng):
    net = make_net([3, 4, 2], rng)
    pools = pools_from(rng.normal(size=(5, 3)))
    refresh_embeddings(pools, net)
    first = pools.normal_embeddings.copy()
    refresh_embeddings(pools, net)
    assert np.array_equal(first, pools.normal_embeddings)
    assert pools.embed_version == 2
