"""Bipartite graphs and dual-channel neighbor propagation.

Propagation follows the LightGCN recipe: at each layer a node's new vector is
the degree-normalized sum of its neighbors' previous vectors, with no feature
transform, nonlinearity, or self-loop.  The final representation of a node is
the plain sum of its layer-0..I vectors; the layer-0 term is what preserves
self-information.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .corpus import SceneTable
from .embeddings import EmbeddingTable
from .errors import DataError


@dataclass
class BipartiteGraph:
    left_ids: tuple[str, ...]
    right_ids: tuple[str, ...]
    edges: tuple[tuple[int, int], ...]
    left_degrees: np.ndarray = field(init=False)
    right_degrees: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        nl, nr = len(self.left_ids), len(self.right_ids)
        if len(set(self.left_ids)) != nl or len(set(self.right_ids)) != nr:
            raise DataError("duplicate node ids in bipartite graph")
        seen: set[tuple[int, int]] = set()
        ld = np.zeros(nl, dtype=np.int64)
        rd = np.zeros(nr, dtype=np.int64)
        for li, ri in self.edges:
            if not (0 <= li < nl and 0 <= ri < nr):
                raise DataError(f"edge ({li}, {ri}) out of range")
            if (li, ri) in seen:
                raise DataError(
                    f"duplicate edge {self.left_ids[li]} - {self.right_ids[ri]}"
                )
            seen.add((li, ri))
            ld[li] += 1
            rd[ri] += 1
        self.left_degrees = ld
        self.right_degrees = rd

    @classmethod
    def from_pairs(
        cls,
        pairs: Sequence[tuple[str, str]],
        left_ids: Sequence[str] | None = None,
        right_ids: Sequence[str] | None = None,
    ) -> "BipartiteGraph":
        """Build from id pairs; node order defaults to first appearance."""
        if left_ids is None:
            left_ids = list(dict.fromkeys(l for l, _ in pairs))
        if right_ids is None:
            right_ids = list(dict.fromkeys(r for _, r in pairs))
        lpos = {i: k for k, i in enumerate(left_ids)}
        rpos = {i: k for k, i in enumerate(right_ids)}
        try:
            edges = tuple((lpos[l], rpos[r]) for l, r in pairs)
        except KeyError as exc:
            raise DataError(f"edge references unknown node id {exc.args[0]}") from exc
        return cls(left_ids=tuple(left_ids), right_ids=tuple(right_ids), edges=edges)

    @property
    def n_left(self) -> int:
        return len(self.left_ids)

    @property
    def n_right(self) -> int:
        return len(self.right_ids)

    def check_no_isolated(self) -> None:
        for k, d in enumerate(self.left_degrees):
            if d == 0:
                raise DataError(f"isolated node {self.left_ids[k]}: cannot normalize")
        for k, d in enumerate(self.right_degrees):
            if d == 0:
                raise DataError(f"isolated node {self.right_ids[k]}: cannot normalize")

    def normalized_adjacency(self) -> sp.csr_matrix:
        """Left-by-right matrix with entries 1 / sqrt(deg_left * deg_right)."""
        self.check_no_isolated()
        rows = np.fromiter((e[0] for e in self.edges), dtype=np.int64, count=len(self.edges))
        cols = np.fromiter((e[1] for e in self.edges), dtype=np.int64, count=len(self.edges))
        vals = 1.0 / np.sqrt(
            self.left_degrees[rows].astype(np.float64)
            * self.right_degrees[cols].astype(np.float64)
        )
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.n_left, self.n_right))

    def mean_pool_matrix(self) -> sp.csr_matrix:
        """Left-by-right matrix averaging right-side rows per left node.

        Only left nodes need nonzero degree; right-side nodes outside every
        pool simply contribute nothing.
        """
        for k, d in enumerate(self.left_degrees):
            if d == 0:
                raise DataError(f"empty pool for {self.left_ids[k]}")
        rows = np.fromiter((e[0] for e in self.edges), dtype=np.int64, count=len(self.edges))
        cols = np.fromiter((e[1] for e in self.edges), dtype=np.int64, count=len(self.edges))
        vals = 1.0 / self.left_degrees[rows].astype(np.float64)
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.n_left, self.n_right))


@dataclass
class PropagationState:
    """Per-layer embeddings for both sides plus their layer sums."""

    left_layers: list[np.ndarray]
    right_layers: list[np.ndarray]
    left_sum: np.ndarray
    right_sum: np.ndarray

    @property
    def n_layers(self) -> int:
        return len(self.left_layers) - 1


def propagate(
    graph: BipartiteGraph,
    left0: np.ndarray,
    right0: np.ndarray,
    layers: int,
    adjacency: sp.csr_matrix | None = None,
) -> PropagationState:
    """Run ``layers`` rounds of normalized neighbor aggregation and sum them.

    ``left0``/``right0`` are (n_left, d) and (n_right, d) layer-0 matrices.
    """
    if layers < 1:
        raise DataError(f"layer count must be >= 1, got {layers}")
    left0 = np.asarray(left0, dtype=np.float64)
    right0 = np.asarray(right0, dtype=np.float64)
    if left0.shape[0] != graph.n_left or right0.shape[0] != graph.n_right:
        raise DataError("embedding row counts do not match graph sides")
    if left0.ndim != 2 or right0.ndim != 2 or left0.shape[1] != right0.shape[1]:
        raise DataError("left/right embeddings must share one dimensionality")

    adj = graph.normalized_adjacency() if adjacency is None else adjacency
    adj_t = adj.T.tocsr()

    left_layers = [left0]
    right_layers = [right0]
    for _ in range(layers):
        left_layers.append(adj @ right_layers[-1])
        right_layers.append(adj_t @ left_layers[-2])
    left_sum = np.sum(left_layers, axis=0)
    right_sum = np.sum(right_layers, axis=0)
    return PropagationState(left_layers, right_layers, left_sum, right_sum)


def propagate_back(
    graph: BipartiteGraph,
    grad_left_sum: np.ndarray,
    grad_right_sum: np.ndarray,
    layers: int,
    adjacency: sp.csr_matrix | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of the layer sums with respect to the layer-0 inputs.

    The dual-channel propagation operator is self-adjoint (the stacked
    adjacency is symmetric and the layer sum has unit coefficients), so the
    backward pass is the forward sweep applied to the incoming gradients.
    """
    state = propagate(graph, grad_left_sum, grad_right_sum, layers, adjacency=adjacency)
    return state.left_sum, state.right_sum


def build_graphs(
    table: SceneTable,
    query_ids: Sequence[str],
    tool_ids: Sequence[str],
) -> tuple[BipartiteGraph, BipartiteGraph, BipartiteGraph]:
    """Materialize the query-scene, query-tool, and scene-tool graphs.

    Node orders are pinned by the caller (queries, tools) and by the scene
    table (scenes) so embedding matrices line up across all three graphs.
    Tools never referenced by a train query are left out of the query-tool
    graph (they cannot be degree-normalized); the scene-tool graph keeps the
    full tool list so pooling matrices stay full-width.
    """
    scene_ids = table.scene_ids()
    referenced = set(t for _, t in table.qt_edges)
    qt_tool_ids = [t for t in tool_ids if t in referenced]
    qs = BipartiteGraph.from_pairs(table.qs_edges, left_ids=query_ids, right_ids=scene_ids)
    qt = BipartiteGraph.from_pairs(table.qt_edges, left_ids=query_ids, right_ids=qt_tool_ids)
    st = BipartiteGraph.from_pairs(table.st_edges, left_ids=scene_ids, right_ids=tool_ids)
    return qs, qt, st


# EmbeddingTable-level wrappers around the matrix core.

def init_scene_embeddings(st: BipartiteGraph, tools: EmbeddingTable) -> EmbeddingTable:
    """Layer-0 scene vectors: mean of each scene's member tool vectors."""
    pool = st.mean_pool_matrix()
    matrix = pool @ tools.to_matrix(st.right_ids)
    return EmbeddingTable.from_matrix(st.left_ids, matrix)


def pool_scene_tool_view(st: BipartiteGraph, tool_view: EmbeddingTable) -> EmbeddingTable:
    """Scene vectors in the tool-centric view: mean of member tool-view rows."""
    pool = st.mean_pool_matrix()
    matrix = pool @ tool_view.to_matrix(st.right_ids)
    return EmbeddingTable.from_matrix(st.left_ids, matrix)


def propagate_scene_view(
    qs: BipartiteGraph,
    queries0: EmbeddingTable,
    scenes0: EmbeddingTable,
    layers: int,
) -> tuple[EmbeddingTable, EmbeddingTable]:
    state = propagate(
        qs, queries0.to_matrix(qs.left_ids), scenes0.to_matrix(qs.right_ids), layers
    )
    return (
        EmbeddingTable.from_matrix(qs.left_ids, state.left_sum),
        EmbeddingTable.from_matrix(qs.right_ids, state.right_sum),
    )


def propagate_tool_view(
    qt: BipartiteGraph,
    queries0: EmbeddingTable,
    tools0: EmbeddingTable,
    layers: int,
) -> tuple[EmbeddingTable, EmbeddingTable]:
    state = propagate(
        qt, queries0.to_matrix(qt.left_ids), tools0.to_matrix(qt.right_ids), layers
    )
    return (
        EmbeddingTable.from_matrix(qt.left_ids, state.left_sum),
        EmbeddingTable.from_matrix(qt.right_ids, state.right_sum),
    )
