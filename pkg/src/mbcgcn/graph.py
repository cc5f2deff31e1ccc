"""Symmetric-normalized bipartite adjacency and one LightGCN propagation layer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .data import InteractionSet


class GraphError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class BehaviorGraph:
    """Per-behavior graph in CSR form for both orientations.

    ``user_adj`` is M x N with entries 1/sqrt(deg(u) deg(i)); ``item_adj`` is
    its exact transpose, kept so both products run row-wise.
    """

    M: int
    N: int
    user_adj: sp.csr_matrix
    item_adj: sp.csr_matrix

    @property
    def n_edges(self) -> int:
        return self.user_adj.nnz

    def weight(self, u: int, i: int) -> float:
        return float(self.user_adj[u, i])

    def dense(self) -> np.ndarray:
        return self.user_adj.toarray()


def build_normalized_adjacency(s: InteractionSet, M: int, N: int) -> BehaviorGraph:
    users, items = s.users, s.items
    if len(users) and (users.min() < 0 or users.max() >= M or items.min() < 0 or items.max() >= N):
        raise GraphError(f"interaction index outside {M}x{N}")
    # binary semantics: repeated pairs collapse to a single edge
    if len(users):
        pairs = np.unique(np.stack([users, items], axis=1), axis=0)
        users, items = pairs[:, 0], pairs[:, 1]
    deg_u = np.bincount(users, minlength=M).astype(np.float64)
    deg_i = np.bincount(items, minlength=N).astype(np.float64)
    weights = 1.0 / np.sqrt(deg_u[users] * deg_i[items])
    user_adj = sp.csr_matrix((weights, (users, items)), shape=(M, N), dtype=np.float64)
    user_adj.sort_indices()
    item_adj = user_adj.T.tocsr()
    item_adj.sort_indices()
    return BehaviorGraph(M, N, user_adj, item_adj)


def propagate_layer(graph: BehaviorGraph, user_emb: np.ndarray, item_emb: np.ndarray):
    """One simultaneous propagation step.

    Users aggregate their items' input embeddings and items aggregate their
    users' input embeddings; isolated nodes come out as zero rows. The map is
    self-adjoint under swapping roles, so the backward pass reuses it.
    """
    if user_emb.shape[0] != graph.M or item_emb.shape[0] != graph.N:
        raise GraphError(
            f"embedding rows {user_emb.shape[0]}x{item_emb.shape[0]} do not match graph {graph.M}x{graph.N}"
        )
    if user_emb.ndim != 2 or item_emb.ndim != 2 or user_emb.shape[1] != item_emb.shape[1]:
        raise GraphError("user and item embeddings must be 2-d with equal width")
    return graph.user_adj @ item_emb, graph.item_adj @ user_emb
