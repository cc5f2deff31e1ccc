"""BPR objective and its exact reverse-mode gradient through the cascade."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import graph as graph_mod
from .cascade import CascadeParams, ContractError, ForwardTrace, ModelConfig, cascade_forward
from .graph import BehaviorGraph


@dataclass(frozen=True, eq=False)
class TripletBatch:
    users: np.ndarray
    pos: np.ndarray
    neg: np.ndarray

    def __post_init__(self):
        for name in ("users", "pos", "neg"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.int64))
        if not (self.users.shape == self.pos.shape == self.neg.shape):
            raise ValueError("triplet columns must align")

    def __len__(self) -> int:
        return len(self.users)

    @classmethod
    def from_triples(cls, triples) -> "TripletBatch":
        arr = np.asarray(list(triples), dtype=np.int64).reshape(-1, 3)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2])

    def concat(self, other: "TripletBatch") -> "TripletBatch":
        return TripletBatch(np.r_[self.users, other.users], np.r_[self.pos, other.pos],
                            np.r_[self.neg, other.neg])


class Gradients(CascadeParams):
    """Gradient tables shaped exactly like CascadeParams."""


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def margins(trace: ForwardTrace, batch: TripletBatch) -> np.ndarray:
    return trace.scores(batch.users, batch.pos) - trace.scores(batch.users, batch.neg)


def bpr_loss(trace: ForwardTrace, batch: TripletBatch, params: CascadeParams, lam: float) -> float:
    """sum over triplets of -ln sigmoid(margin), plus lam * ||params||^2."""
    bpr = float(np.sum(softplus(-margins(trace, batch)))) if len(batch) else 0.0
    return bpr + lam * params.squared_norm() if lam else bpr


def _check_trace(trace: ForwardTrace, params: CascadeParams) -> None:
    first = trace.blocks[0]
    if first.layers_u[0].shape != params.P.shape or first.layers_i[0].shape != params.Q.shape:
        raise ContractError("trace shapes do not match params")
    if not (np.array_equal(first.layers_u[0], params.P) and np.array_equal(first.layers_i[0], params.Q)):
        raise ContractError("trace was not produced by these params")
    k = trace.config.n_transforms
    if len(params.user_transforms) != k or len(params.item_transforms) != k:
        raise ContractError("trace config and params disagree on transforms")


def backward_batch(trace: ForwardTrace, graphs: Sequence[BehaviorGraph], batch: TripletBatch,
                   params: CascadeParams, lam: float) -> Gradients:
    _check_trace(trace, params)
    config = trace.config
    B, d = config.B, config.d

    # d loss / d margin = -(1 - sigmoid(margin)) = -sigmoid(-margin)
    seed = -sigmoid(-margins(trace, batch))[:, None]
    d_final_u = np.zeros_like(trace.final_u)
    d_final_i = np.zeros_like(trace.final_i)
    if len(batch):
        e_u = trace.final_u[batch.users]
        np.add.at(d_final_u, batch.users, seed * (trace.final_i[batch.pos] - trace.final_i[batch.neg]))
        np.add.at(d_final_i, batch.pos, seed * e_u)
        np.add.at(d_final_i, batch.neg, -seed * e_u)

    # aggregation fan-out into the per-behavior block sums
    if config.aggregation == "sum":
        d_sums = [(d_final_u, d_final_i)] * B
    elif config.aggregation == "concat":
        d_sums = [(d_final_u[:, b * d:(b + 1) * d], d_final_i[:, b * d:(b + 1) * d]) for b in range(B)]
    else:
        zu, zi = np.zeros_like(d_final_u), np.zeros_like(d_final_i)
        d_sums = [(zu, zi)] * (B - 1) + [(d_final_u, d_final_i)]

    grads = Gradients(np.zeros_like(params.P), np.zeros_like(params.Q),
                      [None] * config.n_transforms, [None] * config.n_transforms)
    carry_u = carry_i = None  # gradient w.r.t. the next block's input
    for b in range(B - 1, -1, -1):
        ds_u, ds_i = d_sums[b]
        if carry_u is not None:
            if config.transform_enabled:
                blk = trace.blocks[b]
                grads.user_transforms[b] = carry_u.T @ blk.sum_u
                grads.item_transforms[b] = carry_i.T @ blk.sum_i
                carry_u = carry_u @ params.user_transforms[b]
                carry_i = carry_i @ params.item_transforms[b]
            ds_u = ds_u + carry_u
            ds_i = ds_i + carry_i
        # every layer of the block receives the block-sum gradient; walk the
        # propagation chain downwards accumulating the adjoint
        g_u, g_i = ds_u, ds_i
        for _ in range(config.layers[b]):
            pu, pi = graph_mod.propagate_layer(graphs[b], g_u, g_i)
            g_u, g_i = ds_u + pu, ds_i + pi
        carry_u, carry_i = g_u, g_i

    grads.P = np.array(carry_u, copy=True)
    grads.Q = np.array(carry_i, copy=True)
    if lam:
        grads.P += 2.0 * lam * params.P
        grads.Q += 2.0 * lam * params.Q
        for k in range(config.n_transforms):
            grads.user_transforms[k] = grads.user_transforms[k] + 2.0 * lam * params.user_transforms[k]
            grads.item_transforms[k] = grads.item_transforms[k] + 2.0 * lam * params.item_transforms[k]
    return grads


def loss_at(params: CascadeParams, graphs, config: ModelConfig, batch: TripletBatch, lam: float) -> float:
    return bpr_loss(cascade_forward(graphs, params, config), batch, params, lam)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)


def finite_difference_check(params: CascadeParams, graphs, config: ModelConfig, batch: TripletBatch,
                            lam: float, epsilon: float = 1e-5, analytic: Gradients | None = None,
                            max_entries: int = 10_000, seed: int = 0) -> float:
    """Max relative error between the analytic gradient and central
    differences, over every entry (or a random subsample of ``max_entries``)."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if analytic is None:
        trace = cascade_forward(graphs, params, config)
        analytic = backward_batch(trace, graphs, batch, params, lam)
    work = params.copy()
    arrays, grads = work.arrays(), analytic.arrays()
    entries = [(k, idx) for k, a in enumerate(arrays) for idx in range(a.size)]
    if len(entries) > max_entries:
        rng = np.random.default_rng(seed)
        pick = rng.choice(len(entries), size=max_entries, replace=False)
        entries = [entries[p] for p in np.sort(pick)]
    worst = 0.0
    for k, idx in entries:
        flat = arrays[k].reshape(-1)
        orig = flat[idx]
        flat[idx] = orig + epsilon
        up = loss_at(work, graphs, config, batch, lam)
        flat[idx] = orig - epsilon
        down = loss_at(work, graphs, config, batch, lam)
        flat[idx] = orig
        numeric = (up - down) / (2 * epsilon)
        a = grads[k].reshape(-1)[idx]
        worst = max(worst, float(relative_error(np.float64(a), np.float64(numeric))))
    return worst
