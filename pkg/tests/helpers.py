import numpy as np
from oracles import random_pairs

from mbcgcn.cascade import CascadeParams, ModelConfig, init_params
from mbcgcn.data import InteractionSet
from mbcgcn.graph import build_normalized_adjacency


def random_graphs(rng, B, M, N, p=0.4):
    graphs, pair_lists = [], []
    for b in range(B):
        pairs = random_pairs(rng, M, N, p)
        pair_lists.append(pairs)
        users = [u for u, _ in pairs]
        items = [i for _, i in pairs]
        graphs.append(build_normalized_adjacency(InteractionSet(b, users, items), M, N))
    return graphs, pair_lists


def random_instance(rng, B=3, M=6, N=6, d=3, layers=None, transform=True, aggregation="sum", seed=0):
    layers = tuple(rng.integers(0, 4, B)) if layers is None else tuple(layers)
    config = ModelConfig(d, layers, transform, aggregation)
    graphs, pairs = random_graphs(rng, B, M, N)
    params = init_params(config, M, N, seed)
    return config, graphs, pairs, params


def identity_params(params: CascadeParams, B: int) -> CascadeParams:
    d = params.P.shape[1]
    return CascadeParams(params.P, params.Q, [np.eye(d) for _ in range(B - 1)],
                         [np.eye(d) for _ in range(B - 1)])
