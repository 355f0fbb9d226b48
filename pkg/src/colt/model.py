"""The dual-view representation stack and trained-model persistence.

The stack is linear in its two parameter matrices (train-query and tool base
embeddings), so the backward pass reuses the propagation sweep on the
incoming gradients instead of storing activations.  Scene layer-0 vectors are
recomputed from the current tool embeddings on every forward pass, keeping
the mean-pooling definition consistent while tools train.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .embeddings import EmbeddingTable, load_embeddings, save_embeddings
from .errors import DataError
from .graph import BipartiteGraph, propagate, propagate_back

META_FILENAME = "meta"
BASE_QUERIES_FILENAME = "base_queries.jsonl"
BASE_TOOLS_FILENAME = "base_tools.jsonl"
TOOL_VIEW_FILENAME = "tool_view.jsonl"

MODE_FULL = "dual-view"
MODE_PASSTHROUGH = "semantic-passthrough"


@dataclass
class Representations:
    """The five propagated families, one row per node in pinned id order."""

    query_scene: np.ndarray  # (n_queries, d)
    scene_scene: np.ndarray  # (n_scenes, d)
    query_tool: np.ndarray   # (n_queries, d)
    tool_tool: np.ndarray    # (n_tools, d)
    scene_tool: np.ndarray   # (n_scenes, d)


class DualViewStack:
    """Forward/backward through both propagation views for fixed graphs.

    The Q-T graph may span only the tools referenced by train queries; the
    remaining tools have no neighbors, so their tool-view representation is
    exactly their layer-0 vector and gradients pass straight through.
    """

    def __init__(
        self,
        qs: BipartiteGraph,
        qt: BipartiteGraph,
        st: BipartiteGraph,
        layers: int,
    ) -> None:
        if layers < 1:
            raise DataError(f"layer count must be >= 1, got {layers}")
        if qs.left_ids != qt.left_ids:
            raise DataError("query order differs between Q-S and Q-T graphs")
        if qs.right_ids != st.left_ids:
            raise DataError("scene order differs between Q-S and S-T graphs")
        tool_pos = {tid: k for k, tid in enumerate(st.right_ids)}
        try:
            ref_rows = np.array([tool_pos[t] for t in qt.right_ids], dtype=np.int64)
        except KeyError as exc:
            raise DataError(
                f"Q-T tool {exc.args[0]} is missing from the S-T tool list"
            ) from exc
        self.qs = qs
        self.qt = qt
        self.st = st
        self.layers = layers
        self._ref_rows = ref_rows
        self._adj_qs = qs.normalized_adjacency()
        self._adj_qt = qt.normalized_adjacency()
        self._pool = st.mean_pool_matrix()
        self._pool_t = self._pool.T.tocsr()
        # Each train query belongs to exactly one scene.
        scene_row = np.full(qs.n_left, -1, dtype=np.int64)
        for li, ri in qs.edges:
            if scene_row[li] != -1:
                raise DataError(
                    f"query {qs.left_ids[li]} has more than one scene edge"
                )
            scene_row[li] = ri
        self.scene_row_of_query = scene_row

    @property
    def query_ids(self) -> tuple[str, ...]:
        return self.qs.left_ids

    @property
    def scene_ids(self) -> tuple[str, ...]:
        return self.qs.right_ids

    @property
    def tool_ids(self) -> tuple[str, ...]:
        return self.st.right_ids

    def forward(self, query_base: np.ndarray, tool_base: np.ndarray) -> Representations:
        scene0 = self._pool @ tool_base
        scene_state = propagate(
            self.qs, query_base, scene0, self.layers, adjacency=self._adj_qs
        )
        tool_state = propagate(
            self.qt, query_base, tool_base[self._ref_rows], self.layers, adjacency=self._adj_qt
        )
        tool_tool = tool_base.copy()
        tool_tool[self._ref_rows] = tool_state.right_sum
        return Representations(
            query_scene=scene_state.left_sum,
            scene_scene=scene_state.right_sum,
            query_tool=tool_state.left_sum,
            tool_tool=tool_tool,
            scene_tool=self._pool @ tool_tool,
        )

    def backward(self, grads: Representations) -> tuple[np.ndarray, np.ndarray]:
        """Map gradients on the five families to gradients on the two bases."""
        g_tool_tool = grads.tool_tool + self._pool_t @ grads.scene_tool
        gq_tool, gt_ref = propagate_back(
            self.qt,
            grads.query_tool,
            g_tool_tool[self._ref_rows],
            self.layers,
            adjacency=self._adj_qt,
        )
        gq_scene, gs_scene = propagate_back(
            self.qs, grads.query_scene, grads.scene_scene, self.layers, adjacency=self._adj_qs
        )
        grad_query_base = gq_tool + gq_scene
        # Unreferenced tools: identity path for the tool view.
        grad_tool_base = g_tool_tool.copy()
        grad_tool_base[self._ref_rows] = gt_ref
        grad_tool_base += self._pool_t @ gs_scene
        return grad_query_base, grad_tool_base

    def zero_family_grads(self, dim: int) -> Representations:
        return Representations(
            query_scene=np.zeros((self.qs.n_left, dim)),
            scene_scene=np.zeros((self.qs.n_right, dim)),
            query_tool=np.zeros((self.qt.n_left, dim)),
            tool_tool=np.zeros((self.st.n_right, dim)),
            scene_tool=np.zeros((self.st.n_left, dim)),
        )


@dataclass
class TrainedModel:
    """Everything retrieval needs: trained tables plus propagated families."""

    mode: str
    dim: int
    train_query_ids: tuple[str, ...]
    scene_ids: tuple[str, ...]
    tool_ids: tuple[str, ...]
    base_queries: EmbeddingTable
    base_tools: EmbeddingTable
    query_scene_view: EmbeddingTable   # e_q over the scene-centric path
    query_tool_view: EmbeddingTable    # e_q over the tool-centric path
    scene_scene_view: EmbeddingTable
    scene_tool_view: EmbeddingTable
    tool_view: EmbeddingTable          # trained tool representations used for scoring
    config: dict
    epochs_run: int = 0

    def __post_init__(self) -> None:
        if self.mode not in (MODE_FULL, MODE_PASSTHROUGH):
            raise DataError(f"unknown model mode {self.mode!r}")
        for vec in self.tool_view.rows.values():
            if not np.all(np.isfinite(vec)):
                raise DataError("non-finite tool representation in trained model")

    def covers_tools(self, tool_ids: Sequence[str]) -> bool:
        return all(t in self.tool_view for t in tool_ids)

    def save(self, out_dir: str | Path, extra_meta: dict | None = None) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        meta = {
            "mode": self.mode,
            "dim": self.dim,
            "epochs_run": self.epochs_run,
            "config": self.config,
            "train_query_ids": list(self.train_query_ids),
            "scene_ids": list(self.scene_ids),
            "tool_ids": list(self.tool_ids),
        }
        if extra_meta:
            meta.update(extra_meta)
        tmp = out / (META_FILENAME + ".tmp")
        tmp.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        tmp.replace(out / META_FILENAME)
        save_embeddings(self.base_queries, out / BASE_QUERIES_FILENAME, entity="query")
        save_embeddings(self.base_tools, out / BASE_TOOLS_FILENAME, entity="tool")
        save_embeddings(self.tool_view, out / TOOL_VIEW_FILENAME, entity="tool")

    @classmethod
    def load(cls, ckpt_dir: str | Path, stack: DualViewStack | None = None) -> "TrainedModel":
        """Rebuild a model from a checkpoint directory.

        The checkpoint stores the two base tables and the trained tool view;
        the propagated query/scene families are recomputed from ``stack``
        when one is supplied (required for train-split retrieval).
        """
        ckpt = Path(ckpt_dir)
        meta_path = ckpt / META_FILENAME
        if not meta_path.exists():
            raise DataError(f"checkpoint meta file not found: {meta_path}")
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        dim = int(meta["dim"])
        train_query_ids = tuple(meta["train_query_ids"])
        scene_ids = tuple(meta["scene_ids"])
        tool_ids = tuple(meta["tool_ids"])
        base_queries = load_embeddings(ckpt / BASE_QUERIES_FILENAME, train_query_ids)
        base_tools = load_embeddings(ckpt / BASE_TOOLS_FILENAME, tool_ids)
        tool_view = load_embeddings(ckpt / TOOL_VIEW_FILENAME, tool_ids)
        if base_queries.dim != dim or base_tools.dim != dim or tool_view.dim != dim:
            raise DataError("checkpoint tables disagree on dimensionality")

        if stack is not None:
            if stack.query_ids != train_query_ids or stack.tool_ids != tool_ids:
                raise DataError("checkpoint does not match the prepared graphs")
            reps = stack.forward(
                base_queries.to_matrix(train_query_ids),
                base_tools.to_matrix(tool_ids),
            )
            families = _families_to_tables(train_query_ids, scene_ids, tool_ids, reps)
        else:
            empty_q = EmbeddingTable(dim=dim, rows={})
            empty_s = EmbeddingTable(dim=dim, rows={})
            families = (empty_q, empty_q, empty_s, empty_s)

        query_scene_view, query_tool_view, scene_scene_view, scene_tool_view = families
        return cls(
            mode=meta["mode"],
            dim=dim,
            train_query_ids=train_query_ids,
            scene_ids=scene_ids,
            tool_ids=tool_ids,
            base_queries=base_queries,
            base_tools=base_tools,
            query_scene_view=query_scene_view,
            query_tool_view=query_tool_view,
            scene_scene_view=scene_scene_view,
            scene_tool_view=scene_tool_view,
            tool_view=tool_view,
            config=meta.get("config", {}),
            epochs_run=int(meta.get("epochs_run", 0)),
        )


def _families_to_tables(
    query_ids: Sequence[str],
    scene_ids: Sequence[str],
    tool_ids: Sequence[str],
    reps: Representations,
) -> tuple[EmbeddingTable, EmbeddingTable, EmbeddingTable, EmbeddingTable]:
    return (
        EmbeddingTable.from_matrix(query_ids, reps.query_scene),
        EmbeddingTable.from_matrix(query_ids, reps.query_tool),
        EmbeddingTable.from_matrix(scene_ids, reps.scene_scene),
        EmbeddingTable.from_matrix(scene_ids, reps.scene_tool),
    )


def model_from_state(
    stack: DualViewStack,
    query_base: np.ndarray,
    tool_base: np.ndarray,
    config: dict,
    mode: str = MODE_FULL,
    epochs_run: int = 0,
) -> TrainedModel:
    """Propagate the given bases once and package the result."""
    reps = stack.forward(query_base, tool_base)
    qsv, qtv, ssv, stv = _families_to_tables(
        stack.query_ids, stack.scene_ids, stack.tool_ids, reps
    )
    dim = int(query_base.shape[1])
    tool_view = EmbeddingTable.from_matrix(stack.tool_ids, reps.tool_tool)
    return TrainedModel(
        mode=mode,
        dim=dim,
        train_query_ids=stack.query_ids,
        scene_ids=stack.scene_ids,
        tool_ids=stack.tool_ids,
        base_queries=EmbeddingTable.from_matrix(stack.query_ids, query_base),
        base_tools=EmbeddingTable.from_matrix(stack.tool_ids, tool_base),
        query_scene_view=qsv,
        query_tool_view=qtv,
        scene_scene_view=ssv,
        scene_tool_view=stv,
        tool_view=tool_view,
        config=config,
        epochs_run=epochs_run,
    )


def passthrough_model(
    query_table: EmbeddingTable,
    tool_table: EmbeddingTable,
    config: dict,
) -> TrainedModel:
    """Collaborative stage disabled: scoring falls back to semantic cosine.

    The tool view is the raw semantic tool table and both query views are the
    semantic query vectors, so the dual-view score degenerates to twice the
    semantic similarity and rankings equal the semantic-only baseline.
    """
    dim = tool_table.dim
    qids = tuple(query_table.rows)
    tids = tuple(tool_table.rows)
    empty_scenes = EmbeddingTable(dim=dim, rows={})
    return TrainedModel(
        mode=MODE_PASSTHROUGH,
        dim=dim,
        train_query_ids=qids,
        scene_ids=(),
        tool_ids=tids,
        base_queries=query_table,
        base_tools=tool_table,
        query_scene_view=query_table,
        query_tool_view=query_table,
        scene_scene_view=empty_scenes,
        scene_tool_view=empty_scenes,
        tool_view=tool_table,
        config=config,
    )
