import numpy as np
import pytest
from helpers import identity_params, random_instance
from oracles import dense_block, dense_cascade, dense_normalized, random_pairs

from mbcgcn.cascade import (CascadeParams, ContractError, ModelConfig, aggregate, block_forward,
                            cascade_forward, feature_transform, init_params, score_pair, score_user_all)
from mbcgcn.data import InteractionSet
from mbcgcn.graph import build_normalized_adjacency


def test_init_transform_bound_and_determinism():
    cfg = ModelConfig(d=64, layers=(3, 4, 3))
    p = init_params(cfg, 10, 12, seed=4)
    bound = np.sqrt(6 / 128)
    assert bound == pytest.approx(0.2165, abs=1e-4)
    for w in p.user_transforms + p.item_transforms:
        assert w.shape == (64, 64)
        assert np.abs(w).max() <= bound
    assert np.abs(p.P).max() <= bound and np.abs(p.Q).max() <= bound
    again = init_params(cfg, 10, 12, seed=4)
    assert all(a.tobytes() == b.tobytes() for a, b in zip(p.arrays(), again.arrays()))


def test_init_without_transforms():
    p = init_params(ModelConfig(d=8, layers=(1, 2), transform_enabled=False), 3, 4, 0)
    assert p.user_transforms == [] and p.item_transforms == []
    assert init_params(ModelConfig(d=8, layers=(2,)), 3, 4, 0).user_transforms == []


@pytest.mark.parametrize("kwargs", [dict(d=0), dict(layers=()), dict(layers=(1, -1)), dict(aggregation="max")])
def test_model_config_validation(kwargs):
    with pytest.raises(ContractError):
        ModelConfig(**kwargs)


def edge_graph():
    return build_normalized_adjacency(InteractionSet(0, [0], [0]), 1, 1)


def test_block_zero_layers_is_identity():
    rng = np.random.default_rng(0)
    eu, ei = rng.standard_normal((1, 2)), rng.standard_normal((1, 2))
    blk = block_forward(edge_graph(), eu, ei, 0)
    assert np.array_equal(blk.sum_u, eu) and np.array_equal(blk.sum_i, ei)


def test_block_single_edge_one_layer():
    blk = block_forward(edge_graph(), np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]), 1)
    assert blk.sum_u.tolist() == [[1.0, 1.0]]
    assert blk.sum_i.tolist() == [[1.0, 1.0]]


def test_block_matches_dense_oracle():
    rng = np.random.default_rng(5)
    pairs = random_pairs(rng, 6, 5)
    g = build_normalized_adjacency(InteractionSet(0, [u for u, _ in pairs], [i for _, i in pairs]), 6, 5)
    eu, ei = rng.standard_normal((6, 3)), rng.standard_normal((5, 3))
    blk = block_forward(g, eu, ei, 3)
    su, si = dense_block(dense_normalized(pairs, 6, 5), eu, ei, 3)
    np.testing.assert_allclose(blk.sum_u, su, atol=1e-10, rtol=0)
    np.testing.assert_allclose(blk.sum_i, si, atol=1e-10, rtol=0)
    assert len(blk.layers_u) == 4


def test_feature_transform_cases():
    rng = np.random.default_rng(1)
    xu, xi = rng.standard_normal((4, 3)), rng.standard_normal((5, 3))
    u, i = feature_transform(xu, xi, np.eye(3), np.eye(3))
    assert np.array_equal(u, xu) and np.array_equal(i, xi)
    u, i = feature_transform(xu, xi, np.zeros((3, 3)), np.zeros((3, 3)))
    assert not u.any() and not i.any()
    u, i = feature_transform(xu, xi, 2 * np.eye(3), 2 * np.eye(3))
    assert np.array_equal(u, 2 * xu) and np.array_equal(i, 2 * xi)
    u, i = feature_transform(xu, xi)
    assert u is xu and i is xi


def test_feature_transform_uses_column_convention():
    W = np.array([[0.0, 1.0], [0.0, 0.0]])
    u, _ = feature_transform(np.array([[3.0, 5.0]]), np.zeros((1, 2)), W, W)
    # W @ (3, 5) = (5, 0)
    assert u.tolist() == [[5.0, 0.0]]


def test_aggregate_modes():
    a = (np.array([[1.0, 2.0]]), np.array([[0.0, 1.0]]))
    b = (np.array([[3.0, 4.0]]), np.array([[1.0, 1.0]]))
    assert aggregate([a], "sum")[0].tolist() == [[1.0, 2.0]]
    assert aggregate([a, b], "sum")[0].tolist() == [[4.0, 6.0]]
    assert aggregate([a, b], "concat")[0].tolist() == [[1.0, 2.0, 3.0, 4.0]]
    assert aggregate([a, b], "last_only")[1].tolist() == [[1.0, 1.0]]
    with pytest.raises(ContractError):
        aggregate([a, (np.ones((1, 3)), np.ones((1, 3)))], "sum")


def test_forward_graph_count_mismatch():
    rng = np.random.default_rng(0)
    cfg, graphs, _, params = random_instance(rng, B=3)
    with pytest.raises(ContractError):
        cascade_forward(graphs[:2], params, cfg)


def test_single_behavior_equals_lightgcn_block():
    rng = np.random.default_rng(2)
    cfg, graphs, _, params = random_instance(rng, B=1, layers=(3,), transform=False)
    trace = cascade_forward(graphs, params, cfg)
    blk = block_forward(graphs[0], params.P, params.Q, 3)
    assert np.array_equal(trace.final_u, blk.sum_u) and np.array_equal(trace.final_i, blk.sum_i)


def test_zero_embeddings_give_zero_everywhere():
    rng = np.random.default_rng(3)
    cfg, graphs, _, params = random_instance(rng, B=3, layers=(1, 2, 1))
    params = CascadeParams(np.zeros_like(params.P), np.zeros_like(params.Q),
                           params.user_transforms, params.item_transforms)
    trace = cascade_forward(graphs, params, cfg)
    for blk in trace.blocks:
        assert not any(x.any() for x in blk.layers_u + blk.layers_i)
    assert not trace.final_u.any() and not trace.final_i.any()


@pytest.mark.parametrize("aggregation", ["sum", "concat", "last_only"])
@pytest.mark.parametrize("transform", [True, False])
def test_forward_matches_dense_oracle(aggregation, transform):
    rng = np.random.default_rng(17)
    cfg, graphs, pairs, params = random_instance(rng, B=3, M=6, N=6, d=2, layers=(2, 3, 1),
                                                 transform=transform, aggregation=aggregation)
    trace = cascade_forward(graphs, params, cfg)
    adjs = [dense_normalized(p, 6, 6) for p in pairs]
    wu = params.user_transforms if transform else None
    wi = params.item_transforms if transform else None
    eu, ei = dense_cascade(adjs, params.P, params.Q, cfg.layers, wu, wi, aggregation)
    np.testing.assert_allclose(trace.final_u, eu, atol=1e-10, rtol=0)
    np.testing.assert_allclose(trace.final_i, ei, atol=1e-10, rtol=0)


def test_block_sum_bookkeeping_is_exact():
    rng = np.random.default_rng(4)
    cfg, graphs, _, params = random_instance(rng, B=3, layers=(3, 0, 2))
    for blk in cascade_forward(graphs, params, cfg).blocks:
        acc_u, acc_i = blk.layers_u[0].copy(), blk.layers_i[0].copy()
        for u, i in zip(blk.layers_u[1:], blk.layers_i[1:]):
            acc_u += u
            acc_i += i
        assert np.array_equal(blk.sum_u - acc_u, np.zeros_like(acc_u))
        assert np.array_equal(blk.sum_i - acc_i, np.zeros_like(acc_i))


def test_identity_transforms_collapse_to_disabled():
    rng = np.random.default_rng(8)
    cfg, graphs, _, params = random_instance(rng, B=3, layers=(2, 1, 3))
    with_id = cascade_forward(graphs, identity_params(params, 3), cfg)
    off_cfg = ModelConfig(cfg.d, cfg.layers, False, cfg.aggregation)
    off = cascade_forward(graphs, CascadeParams(params.P, params.Q), off_cfg)
    assert np.array_equal(with_id.final_u, off.final_u) and np.array_equal(with_id.final_i, off.final_i)


def test_forward_is_linear_in_embeddings():
    rng = np.random.default_rng(9)
    cfg, graphs, _, params = random_instance(rng, B=3, layers=(1, 2, 2), aggregation="concat")
    alpha = rng.uniform(-3, 3)
    base = cascade_forward(graphs, params, cfg)
    scaled = CascadeParams(alpha * params.P, alpha * params.Q, params.user_transforms, params.item_transforms)
    out = cascade_forward(graphs, scaled, cfg)
    np.testing.assert_allclose(out.final_u, alpha * base.final_u, atol=1e-12)
    np.testing.assert_allclose(out.final_i, alpha * base.final_i, atol=1e-12)


def test_mf_degenerate_scores():
    rng = np.random.default_rng(10)
    cfg, graphs, _, params = random_instance(rng, B=1, layers=(0,), transform=False)
    trace = cascade_forward(graphs, params, cfg)
    assert np.array_equal(trace.final_i @ trace.final_u.T, params.Q @ params.P.T)


def test_score_pair():
    assert score_pair(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0
    assert score_pair(np.array([1.0, 1.0]), np.array([1.0, 1.0])) == 2.0
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal(5), rng.standard_normal(5)
    assert score_pair(3.5 * a, b) == pytest.approx(3.5 * score_pair(a, b), rel=1e-14)
    with pytest.raises(ContractError):
        score_pair(np.ones(2), np.ones(3))


def test_score_user_all():
    assert score_user_all(np.array([2.0, -5.0]), np.eye(2)).tolist() == [2.0, -5.0]
    assert not score_user_all(np.zeros(3), np.ones((4, 3))).any()
    rng = np.random.default_rng(12)
    table, e_u = rng.standard_normal((40, 8)), rng.standard_normal(8)
    looped = np.array([score_pair(e_u, row) for row in table])
    np.testing.assert_array_equal(score_user_all(e_u, table), looped)


def test_argmax_stable_under_positive_scaling():
    rng = np.random.default_rng(13)
    table, e_u = rng.standard_normal((50, 4)), rng.standard_normal(4)
    for alpha in (1e-3, 0.5, 7.0):
        assert np.argmax(score_user_all(alpha * e_u, table)) == np.argmax(score_user_all(e_u, table))
