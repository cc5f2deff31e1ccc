"""Cascading LightGCN forward pass: per-behavior blocks chained by linear
feature transforms, cross-behavior aggregation and inner-product scoring."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import graph as graph_mod
from .graph import BehaviorGraph

AGGREGATIONS = ("sum", "concat", "last_only")


class ContractError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    d: int = 64
    layers: tuple[int, ...] = (3, 4, 3)
    transform_enabled: bool = True
    aggregation: str = "sum"

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(int(x) for x in self.layers))
        if self.d < 1:
            raise ContractError("embedding size must be >= 1")
        if not self.layers:
            raise ContractError("at least one behavior is required")
        if any(x < 0 for x in self.layers):
            raise ContractError("layer counts must be >= 0")
        if self.aggregation not in AGGREGATIONS:
            raise ContractError(f"aggregation must be one of {AGGREGATIONS}, got {self.aggregation!r}")

    @property
    def B(self) -> int:
        return len(self.layers)

    @property
    def n_transforms(self) -> int:
        return self.B - 1 if self.transform_enabled else 0


@dataclass
class CascadeParams:
    P: np.ndarray
    Q: np.ndarray
    user_transforms: list[np.ndarray] = field(default_factory=list)
    item_transforms: list[np.ndarray] = field(default_factory=list)

    def arrays(self) -> list[np.ndarray]:
        return [self.P, self.Q, *self.user_transforms, *self.item_transforms]

    def copy(self):
        return type(self)(self.P.copy(), self.Q.copy(),
                          [w.copy() for w in self.user_transforms],
                          [w.copy() for w in self.item_transforms])

    def zeros_like(self):
        return type(self)(np.zeros_like(self.P), np.zeros_like(self.Q),
                          [np.zeros_like(w) for w in self.user_transforms],
                          [np.zeros_like(w) for w in self.item_transforms])

    def squared_norm(self) -> float:
        return float(sum(np.sum(a * a) for a in self.arrays()))

    def equals(self, other: "CascadeParams") -> bool:
        a, b = self.arrays(), other.arrays()
        return len(a) == len(b) and all(
            x.shape == y.shape and x.dtype == y.dtype and np.array_equal(x, y) for x, y in zip(a, b)
        )

    def as_float32_precision(self):
        """Same params rounded through float32, the checkpoint storage precision."""
        def r(a):
            return a.astype(np.float32).astype(np.float64)
        return type(self)(r(self.P), r(self.Q), [r(w) for w in self.user_transforms],
                          [r(w) for w in self.item_transforms])


def xavier_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def init_params(config: ModelConfig, M: int, N: int, seed: int) -> CascadeParams:
    rng = np.random.default_rng(seed)
    d = config.d
    bound = xavier_bound(d, d)
    P = rng.uniform(-bound, bound, size=(M, d))
    Q = rng.uniform(-bound, bound, size=(N, d))
    wu = [rng.uniform(-bound, bound, size=(d, d)) for _ in range(config.n_transforms)]
    wi = [rng.uniform(-bound, bound, size=(d, d)) for _ in range(config.n_transforms)]
    return CascadeParams(P, Q, wu, wi)


@dataclass
class BlockTrace:
    layers_u: list[np.ndarray]
    layers_i: list[np.ndarray]
    sum_u: np.ndarray
    sum_i: np.ndarray


@dataclass
class ForwardTrace:
    blocks: list[BlockTrace]
    final_u: np.ndarray
    final_i: np.ndarray
    config: ModelConfig

    def scores(self, users: np.ndarray, items: np.ndarray) -> np.ndarray:
        return np.einsum("kd,kd->k", self.final_u[users], self.final_i[items])


def block_forward(graph: BehaviorGraph, input_u: np.ndarray, input_i: np.ndarray, L: int) -> BlockTrace:
    layers_u, layers_i = [input_u], [input_i]
    sum_u, sum_i = input_u.copy(), input_i.copy()
    for _ in range(L):
        u, i = graph_mod.propagate_layer(graph, layers_u[-1], layers_i[-1])
        layers_u.append(u)
        layers_i.append(i)
        sum_u += u
        sum_i += i
    return BlockTrace(layers_u, layers_i, sum_u, sum_i)


def feature_transform(block_sum_u, block_sum_i, W_u=None, W_i=None):
    """Map every row through the shared per-side matrix (row form: x @ W.T).

    Missing matrices mean the transform is disabled and rows pass through.
    """
    if W_u is None or W_i is None:
        return block_sum_u, block_sum_i
    if W_u.shape != (block_sum_u.shape[1],) * 2 or W_i.shape != (block_sum_i.shape[1],) * 2:
        raise ContractError("transform matrix shape does not match embedding width")
    return block_sum_u @ W_u.T, block_sum_i @ W_i.T


def aggregate(block_sums: Sequence[tuple[np.ndarray, np.ndarray]], mode: str):
    if not block_sums:
        raise ContractError("nothing to aggregate")
    shapes = {s.shape[1] for pair in block_sums for s in pair}
    if len(shapes) != 1:
        raise ContractError(f"mixed embedding widths {sorted(shapes)}")
    if mode == "sum":
        e_u, e_i = block_sums[0][0].copy(), block_sums[0][1].copy()
        for u, i in block_sums[1:]:
            e_u += u
            e_i += i
        return e_u, e_i
    if mode == "concat":
        return (np.concatenate([u for u, _ in block_sums], axis=1),
                np.concatenate([i for _, i in block_sums], axis=1))
    if mode == "last_only":
        return block_sums[-1][0].copy(), block_sums[-1][1].copy()
    raise ContractError(f"unknown aggregation {mode!r}")


def check_params(params: CascadeParams, config: ModelConfig, M: int, N: int) -> None:
    d = config.d
    if params.P.shape != (M, d) or params.Q.shape != (N, d):
        raise ContractError(f"embedding tables {params.P.shape}/{params.Q.shape} do not match {M}x{N}, d={d}")
    k = config.n_transforms
    if len(params.user_transforms) != k or len(params.item_transforms) != k:
        raise ContractError(f"expected {k} transforms per side")
    for w in (*params.user_transforms, *params.item_transforms):
        if w.shape != (d, d):
            raise ContractError("transform matrix must be d x d")


def cascade_forward(graphs: Sequence[BehaviorGraph], params: CascadeParams, config: ModelConfig) -> ForwardTrace:
    if len(graphs) != config.B:
        raise ContractError(f"{len(graphs)} graphs for a chain of {config.B} behaviors")
    M, N = graphs[0].M, graphs[0].N
    check_params(params, config, M, N)
    x_u, x_i = params.P, params.Q
    blocks = []
    for b, (g, L) in enumerate(zip(graphs, config.layers)):
        if b > 0:
            if config.transform_enabled:
                x_u, x_i = feature_transform(blocks[-1].sum_u, blocks[-1].sum_i,
                                             params.user_transforms[b - 1], params.item_transforms[b - 1])
            else:
                x_u, x_i = blocks[-1].sum_u, blocks[-1].sum_i
        blocks.append(block_forward(g, x_u, x_i, L))
    final_u, final_i = aggregate([(blk.sum_u, blk.sum_i) for blk in blocks], config.aggregation)
    return ForwardTrace(blocks, final_u, final_i, config)


def score_pair(e_u: np.ndarray, e_i: np.ndarray) -> float:
    if e_u.shape != e_i.shape:
        raise ContractError("score vectors differ in length")
    return float(np.sum(e_u * e_i))


def score_user_all(e_u: np.ndarray, item_table: np.ndarray) -> np.ndarray:
    if item_table.shape[1] != e_u.shape[0]:
        raise ContractError("user vector and item table widths differ")
    # same per-row reduction as score_pair, so the two agree bitwise
    return np.sum(item_table * e_u, axis=1)
