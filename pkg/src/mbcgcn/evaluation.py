"""Full-ranking leave-one-out evaluation with Recall@K and NDCG@K."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .cascade import CascadeParams, ContractError, ModelConfig, cascade_forward, score_user_all
from .data import SplitDataset
from .graph import BehaviorGraph


@dataclass
class MetricsReport:
    Ks: tuple[int, ...]
    recall: dict[int, float]
    ndcg: dict[int, float]
    n_users: int
    label: str = ""
    error: str | None = field(default=None, compare=False)

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "users": self.n_users,
            "recall": {str(k): self.recall[k] for k in self.Ks},
            "ndcg": {str(k): self.ndcg[k] for k in self.Ks},
        }

    @classmethod
    def from_dict(cls, obj: Mapping) -> "MetricsReport":
        Ks = tuple(sorted(int(k) for k in obj["recall"]))
        return cls(Ks, {k: float(obj["recall"][str(k)]) for k in Ks},
                   {k: float(obj["ndcg"][str(k)]) for k in Ks}, int(obj["users"]), obj.get("label", ""))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def rows(self) -> list[tuple[str, str, int, float]]:
        """(label, metric, K, value) with recall rows before ndcg rows."""
        return ([(self.label, "recall", k, self.recall[k]) for k in self.Ks]
                + [(self.label, "ndcg", k, self.ndcg[k]) for k in self.Ks])

    @classmethod
    def failed(cls, label: str, error: str) -> "MetricsReport":
        return cls((), {}, {}, 0, label, error)


def rank_of_test_item(scores: np.ndarray, test_item: int, excluded: Iterable[int] = ()) -> int:
    """1-based rank among non-excluded items; ties count against the test item."""
    excluded = np.asarray(sorted(set(int(x) for x in excluded)), dtype=np.int64)
    if np.any(excluded == test_item):
        raise ContractError(f"test item {test_item} is in the excluded set")
    s = scores[test_item]
    ahead = scores >= s
    ahead[test_item] = False
    if len(excluded):
        ahead[excluded] = False
    return 1 + int(np.count_nonzero(ahead))


def metrics_from_rank(rank: int, K: int) -> tuple[float, float]:
    if rank < 1:
        raise ValueError("rank must be >= 1")
    if rank > K:
        return 0.0, 0.0
    return 1.0, 1.0 / math.log2(rank + 1)


def evaluate_users(final_u: np.ndarray, final_i: np.ndarray, held_out: Mapping[int, int],
                   exclusions: Sequence[np.ndarray], extra_excluded: Mapping[int, int],
                   Ks: Sequence[int], label: str = "") -> MetricsReport:
    Ks = tuple(Ks)
    recall = dict.fromkeys(Ks, 0.0)
    ndcg = dict.fromkeys(Ks, 0.0)
    users = sorted(held_out)
    for u in users:
        scores = score_user_all(final_u[u], final_i)
        excluded = list(exclusions[u])
        if u in extra_excluded:
            excluded.append(extra_excluded[u])
        rank = rank_of_test_item(scores, held_out[u], excluded)
        for k in Ks:
            r, n = metrics_from_rank(rank, k)
            recall[k] += r
            ndcg[k] += n
    count = len(users)
    if count:
        recall = {k: v / count for k, v in recall.items()}
        ndcg = {k: v / count for k, v in ndcg.items()}
    return MetricsReport(Ks, recall, ndcg, count, label)


def evaluate_split(params: CascadeParams, config: ModelConfig, graphs: Sequence[BehaviorGraph],
                   split: SplitDataset, Ks: Sequence[int] = (10, 20, 50), label: str = "",
                   on: str = "test") -> MetricsReport:
    """Rank each held-out item against every item the user has not bought in
    train. The other held-out item (validation at test time and vice versa) is
    excluded as a known positive."""
    if on not in ("test", "validation"):
        raise ValueError("on must be 'test' or 'validation'")
    held_out, other = (split.test, split.validation) if on == "test" else (split.validation, split.test)
    trace = cascade_forward(graphs, params, config)
    return evaluate_users(trace.final_u, trace.final_i, held_out, split.train_positives(), other, Ks, label)


def validation_recall(params: CascadeParams, config: ModelConfig, graphs: Sequence[BehaviorGraph],
                      split: SplitDataset, K: int = 20) -> float:
    return evaluate_split(params, config, graphs, split, (K,), on="validation").recall[K]
