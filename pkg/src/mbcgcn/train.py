"""Negative sampling, Adam, and the early-stopped training loop."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .cascade import CascadeParams, ModelConfig, cascade_forward, init_params
from .data import SplitDataset
from .grad import Gradients, TripletBatch, backward_batch, bpr_loss
from .graph import BehaviorGraph, build_normalized_adjacency

logger = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    lam: float = 1e-4
    batch_size: int = 1024
    max_epochs: int = 200
    patience: int = 10
    eval_K: int = 20
    seed: int = 2023
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        # zero is allowed so a run can be checked as a no-op
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: CascadeParams) -> "AdamState":
        return cls([np.zeros_like(a) for a in params.arrays()], [np.zeros_like(a) for a in params.arrays()])


def sample_triplets(users: np.ndarray, pos: np.ndarray, positives: Sequence[np.ndarray], N: int,
                    rng: np.random.Generator) -> TripletBatch:
    """Pair each (user, positive) with one uniform item outside the user's positives.

    Users whose positives cover the whole catalogue are dropped with a warning.
    """
    users = np.asarray(users, dtype=np.int64)
    pos = np.asarray(pos, dtype=np.int64)
    full = np.array([len(positives[u]) >= N for u in users], dtype=bool)
    if full.any():
        for u in np.unique(users[full]):
            logger.warning("user %d has interacted with every item; skipping its triplets", u)
        users, pos = users[~full], pos[~full]
    keys = np.concatenate([u * N + np.asarray(p, dtype=np.int64) for u, p in enumerate(positives)] or [[]])
    keys = np.sort(keys.astype(np.int64))
    neg = rng.integers(0, N, size=len(users))
    todo = np.arange(len(users))
    while len(todo):
        todo = todo[_member(keys, users[todo] * N + neg[todo])]
        neg[todo] = rng.integers(0, N, size=len(todo))
    return TripletBatch(users, pos, neg)


def _member(sorted_keys: np.ndarray, queries: np.ndarray) -> np.ndarray:
    k = np.minimum(np.searchsorted(sorted_keys, queries), max(len(sorted_keys) - 1, 0))
    return (sorted_keys[k] == queries) if len(sorted_keys) else np.zeros(len(queries), dtype=bool)


def adam_step(params: CascadeParams, grads: Gradients, state: AdamState, config: TrainConfig):
    """Bias-corrected Adam update, applied in place."""
    p_arrays, g_arrays = params.arrays(), grads.arrays()
    if len(p_arrays) != len(g_arrays) or any(p.shape != g.shape for p, g in zip(p_arrays, g_arrays)):
        raise ValueError("gradient shapes do not match params")
    if not all(np.isfinite(g).all() for g in g_arrays):
        raise FloatingPointError("non-finite gradient entry; step aborted")
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(p_arrays, g_arrays, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= config.learning_rate * (m / c1) / (np.sqrt(v / c2) + config.adam_eps)
    return params, state


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    metric: float
    elapsed: float

    def line(self, metric_name: str = "recall") -> str:
        return (f"epoch={self.epoch} loss={self.loss:.6f} val_{metric_name}={self.metric:.6f} "
                f"elapsed={self.elapsed:.2f}")


@dataclass
class TrainingLog:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    steps: int = 0
    eval_K: int = 20

    def lines(self) -> list[str]:
        return [r.line(f"recall@{self.eval_K}") for r in self.records]

    def deterministic_view(self) -> list[tuple[int, float, float]]:
        """Records without wall-clock time."""
        return [(r.epoch, r.loss, r.metric) for r in self.records]


def build_graphs(split: SplitDataset) -> list[BehaviorGraph]:
    train = split.train
    return [build_normalized_adjacency(s, train.M, train.N) for s in train.sets]


Evaluator = Callable[[CascadeParams, list], float]


def fit(split: SplitDataset, model_config: ModelConfig, train_config: TrainConfig,
        evaluator: Evaluator | None = None, params: CascadeParams | None = None,
        graphs: list[BehaviorGraph] | None = None):
    """Train with BPR + Adam and early stopping on a validation metric.

    ``evaluator(params, graphs)`` defaults to validation Recall@eval_K. Returns
    the best-epoch params and the training log.
    """
    from .evaluation import validation_recall

    train = split.train
    if train.B != model_config.B:
        raise TrainingError(f"dataset chain has {train.B} behaviors, model expects {model_config.B}")
    target = train.target
    if len(target) == 0:
        raise TrainingError("training set has no target-behavior interactions")
    graphs = graphs if graphs is not None else build_graphs(split)
    positives = split.train_positives()
    if params is None:
        params = init_params(model_config, train.M, train.N, train_config.seed)
    else:
        params = params.copy()
    if evaluator is None:
        def evaluator(p, g):
            return validation_recall(p, model_config, g, split, train_config.eval_K)

    rng = np.random.default_rng(train_config.seed + 1)
    state = AdamState.for_params(params)
    log = TrainingLog(eval_K=train_config.eval_K)
    best = params.copy()
    best_metric = -math.inf
    stale = 0
    n = len(target)
    bs = train_config.batch_size
    start = time.perf_counter()
    for epoch in range(1, train_config.max_epochs + 1):
        order = rng.permutation(n)
        batch_all = sample_triplets(target.users[order], target.items[order], positives, train.N, rng)
        total = 0.0
        for lo in range(0, len(batch_all), bs):
            batch = TripletBatch(batch_all.users[lo:lo + bs], batch_all.pos[lo:lo + bs],
                                 batch_all.neg[lo:lo + bs])
            trace = cascade_forward(graphs, params, model_config)
            total += bpr_loss(trace, batch, params, 0.0)
            grads = backward_batch(trace, graphs, batch, params, train_config.lam)
            adam_step(params, grads, state, train_config)
            log.steps += 1
        metric = float(evaluator(params, graphs))
        # epoch loss: mean BPR term per triplet plus the regularizer at epoch end
        loss = total / max(len(batch_all), 1) + train_config.lam * params.squared_norm()
        record = EpochRecord(epoch, loss, metric, time.perf_counter() - start)
        log.records.append(record)
        logger.info(record.line(f"recall@{train_config.eval_K}"))
        if metric > best_metric:
            best_metric = metric
            best = params.copy()
            log.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= train_config.patience:
                break
    return best, log
