"""Collaborative training: list sampling, the combined objective, and Adam.

The trainable parameters are the train-query and tool base embeddings; the
propagation stack has no weights of its own.  Each batch runs a full forward
pass over the graphs, accumulates loss gradients on the affected rows of the
representation families, and backpropagates them through the (linear) stack.
Weight decay is decoupled from the gradient step.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from .corpus import Corpus, Query, SceneTable
from .embeddings import EmbeddingTable
from .errors import DataError, NumericalError
from .graph import build_graphs
from .losses import (
    crossview_contrastive_grad,
    list_cosines,
    list_cosines_back,
    listwise_loss_grad,
    pairwise_logistic_loss,
)
from .model import (
    MODE_FULL,
    DualViewStack,
    Representations,
    TrainedModel,
    model_from_state,
)

ABLATE_LISTWISE = "listwise"
ABLATE_CONTRASTIVE = "contrastive"


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 1e-6
    layers: int = 2
    contrastive_weight: float = 0.1  # lambda
    temperature: float = 0.2         # tau
    list_length: int = 32
    batch_size: int = 2048
    epochs: int = 10
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8

    def validate(self, n_tools: int, max_gold: int) -> None:
        if self.learning_rate <= 0:
            raise DataError("learning_rate must be positive")
        if self.weight_decay < 0:
            raise DataError("weight_decay must be >= 0")
        if self.layers < 1:
            raise DataError("layers must be >= 1")
        if self.contrastive_weight < 0:
            raise DataError("contrastive weight lambda must be >= 0")
        if self.temperature <= 0:
            raise DataError("temperature tau must be positive")
        if self.list_length < max_gold + 1:
            raise DataError(
                f"list_length {self.list_length} leaves no room for a negative "
                f"(largest gold set has {max_gold} tools)"
            )
        if self.list_length > n_tools:
            raise DataError(
                f"list_length {self.list_length} exceeds the tool count {n_tools}"
            )
        if self.batch_size < 2:
            raise DataError("batch_size must be >= 2 for in-batch contrastive terms")
        if self.epochs < 0:
            raise DataError("epochs must be >= 0")
        if not (0.0 <= self.adam_beta1 < 1.0 and 0.0 <= self.adam_beta2 < 1.0):
            raise DataError("adam betas must lie in [0, 1)")
        if self.adam_epsilon <= 0:
            raise DataError("adam epsilon must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ListSample:
    """A query's training list: all its gold tools plus sampled negatives."""

    query_id: str
    tool_ids: tuple[str, ...]
    labels: np.ndarray  # float64 0/1, aligned with tool_ids


def sample_list(
    query: Query,
    tool_ids: Sequence[str],
    list_length: int,
    rng: np.random.Generator,
) -> ListSample:
    """Draw ``list_length - n_gold`` distinct negatives from the non-gold tools."""
    gold = set(query.gold_tools)
    n_gold = len(gold)
    if list_length <= n_gold:
        raise DataError(
            f"list_length {list_length} must exceed the gold set size {n_gold}"
        )
    if list_length > len(tool_ids):
        raise DataError(
            f"list_length {list_length} exceeds the tool count {len(tool_ids)}"
        )
    complement = [t for t in tool_ids if t not in gold]
    picks = rng.choice(len(complement), size=list_length - n_gold, replace=False)
    negatives = [complement[i] for i in picks]
    ids = tuple(query.gold_tools) + tuple(negatives)
    labels = np.zeros(list_length, dtype=np.float64)
    labels[:n_gold] = 1.0
    return ListSample(query_id=query.query_id, tool_ids=ids, labels=labels)


class Adam:
    """Plain Adam with bias correction; weight decay is handled by the caller."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for key, p in params.items():
            g = grads[key]
            if key not in self._m:
                self._m[key] = np.zeros_like(p)
                self._v[key] = np.zeros_like(p)
            m = self._m[key]
            v = self._v[key]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


@dataclass
class BatchLosses:
    listwise: float
    contrastive_queries: float
    contrastive_scenes: float

    @property
    def total(self) -> float:
        return self.listwise + self.contrastive_queries + self.contrastive_scenes


def batch_objective(
    stack: DualViewStack,
    query_base: np.ndarray,
    tool_base: np.ndarray,
    batch_query_idx: np.ndarray,
    list_tool_idx: np.ndarray,
    list_labels: np.ndarray,
    contrastive_weight: float,
    temperature: float,
    pairwise: bool = False,
    with_grads: bool = True,
) -> tuple[BatchLosses, np.ndarray | None, np.ndarray | None]:
    """Forward pass plus the combined loss; optionally its parameter gradients.

    ``batch_query_idx`` indexes rows of ``query_base``; ``list_tool_idx`` is
    the (B, L) matrix of candidate tool rows with ``list_labels`` marking the
    positives.  The returned contrastive components already include the
    lambda factor, so ``BatchLosses.total`` is the training objective.
    """
    reps = stack.forward(query_base, tool_base)
    dim = query_base.shape[1]
    n_batch = len(batch_query_idx)

    q_scene = reps.query_scene[batch_query_idx]
    q_tool = reps.query_tool[batch_query_idx]
    cand = reps.tool_tool[list_tool_idx]          # (B, L, d)
    cos_scene, cache_scene = list_cosines(q_scene, cand)
    cos_tool, cache_tool = list_cosines(q_tool, cand)
    scores = cos_scene + cos_tool                 # (B, L)

    grad_scores = np.zeros_like(scores)
    loss_list = 0.0
    for b in range(n_batch):
        if pairwise:
            pos_mask = list_labels[b] == 1.0
            value, gpos, gneg = pairwise_logistic_loss(
                scores[b][pos_mask], scores[b][~pos_mask]
            )
            grad_scores[b][pos_mask] = gpos
            grad_scores[b][~pos_mask] = gneg
        else:
            value, grad_scores[b] = listwise_loss_grad(scores[b], list_labels[b])
        loss_list += value
    loss_list /= n_batch
    grad_scores /= n_batch

    loss_cq = 0.0
    loss_cs = 0.0
    grads = stack.zero_family_grads(dim) if with_grads else None

    if with_grads:
        gq_scene, g_cand_scene = list_cosines_back(grad_scores, cos_scene, cache_scene)
        gq_tool, g_cand_tool = list_cosines_back(grad_scores, cos_tool, cache_tool)
        np.add.at(grads.query_scene, batch_query_idx, gq_scene)
        np.add.at(grads.query_tool, batch_query_idx, gq_tool)
        np.add.at(
            grads.tool_tool,
            list_tool_idx.reshape(-1),
            (g_cand_scene + g_cand_tool).reshape(-1, dim),
        )

    if contrastive_weight > 0.0:
        value, ga, gb = crossview_contrastive_grad(q_scene, q_tool, temperature)
        loss_cq = contrastive_weight * value
        if with_grads:
            np.add.at(grads.query_scene, batch_query_idx, contrastive_weight * ga)
            np.add.at(grads.query_tool, batch_query_idx, contrastive_weight * gb)

        scene_idx = _distinct_scene_rows(stack, batch_query_idx)
        if len(scene_idx) >= 2:
            value, ga, gb = crossview_contrastive_grad(
                reps.scene_scene[scene_idx], reps.scene_tool[scene_idx], temperature
            )
            loss_cs = contrastive_weight * value
            if with_grads:
                np.add.at(grads.scene_scene, scene_idx, contrastive_weight * ga)
                np.add.at(grads.scene_tool, scene_idx, contrastive_weight * gb)

    losses = BatchLosses(
        listwise=loss_list,
        contrastive_queries=loss_cq,
        contrastive_scenes=loss_cs,
    )
    if not with_grads:
        return losses, None, None
    grad_query_base, grad_tool_base = stack.backward(grads)
    return losses, grad_query_base, grad_tool_base


def _distinct_scene_rows(stack: DualViewStack, batch_query_idx: np.ndarray) -> np.ndarray:
    """Scene rows touched by the batch queries, first occurrence order.

    A scene that backs several batch queries enters once: duplicating it
    would place an exact copy of an anchor's positive among its in-batch
    negatives.
    """
    scene_of_query = stack.scene_row_of_query
    seen: dict[int, None] = {}
    for qi in batch_query_idx:
        seen.setdefault(int(scene_of_query[int(qi)]), None)
    return np.fromiter(seen.keys(), dtype=np.int64, count=len(seen))


@dataclass
class EpochStats:
    epoch: int
    listwise: float
    contrastive_queries: float
    contrastive_scenes: float
    total: float

    def format_line(self) -> str:
        return (
            f"{self.epoch},{self.listwise:.10f},{self.contrastive_queries:.10f},"
            f"{self.contrastive_scenes:.10f},{self.total:.10f}"
        )


def train(
    corpus: Corpus,
    scenes: SceneTable,
    initial_queries: EmbeddingTable,
    initial_tools: EmbeddingTable,
    config: TrainConfig,
    ablate: str | None = None,
    log_fn: Callable[[EpochStats], None] | None = None,
) -> TrainedModel:
    """Optimize the base embeddings under the combined objective.

    ``initial_queries`` must cover every train query and ``initial_tools``
    the full tool set.  ``ablate`` may name ``listwise`` (switch to the
    pair-wise loss) or ``contrastive`` (drop the contrastive terms); the
    semantic-only variant never reaches this function.  Deterministic for a
    fixed seed and single-threaded execution.
    """
    if ablate not in (None, ABLATE_LISTWISE, ABLATE_CONTRASTIVE):
        raise DataError(f"unknown ablation {ablate!r}")
    train_queries = corpus.train_queries()
    if not train_queries:
        raise DataError("cannot train: train split is empty")
    tool_ids = corpus.tool_ids()
    max_gold = max(len(q.gold_tools) for q in train_queries)
    config.validate(n_tools=len(tool_ids), max_gold=max_gold)
    if initial_queries.dim != initial_tools.dim:
        raise DataError("query and tool embeddings disagree on dimensionality")

    query_ids = [q.query_id for q in train_queries]
    qs, qt, st = build_graphs(scenes, query_ids, tool_ids)
    stack = DualViewStack(qs, qt, st, layers=config.layers)

    query_base = initial_queries.to_matrix(query_ids).copy()
    tool_base = initial_tools.to_matrix(tool_ids).copy()
    tool_pos = {tid: k for k, tid in enumerate(tool_ids)}
    lam = 0.0 if ablate == ABLATE_CONTRASTIVE else config.contrastive_weight
    pairwise = ablate == ABLATE_LISTWISE

    rng = np.random.default_rng(config.seed)
    adam = Adam(
        lr=config.learning_rate,
        beta1=config.adam_beta1,
        beta2=config.adam_beta2,
        eps=config.adam_epsilon,
    )
    params = {"queries": query_base, "tools": tool_base}
    n_train = len(train_queries)
    batch_size = min(config.batch_size, n_train)
    decay = 1.0 - config.learning_rate * config.weight_decay

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n_train)
        batches = _batch_slices(order, batch_size)
        sums = np.zeros(3)
        for batch_no, batch_idx in enumerate(batches):
            list_idx, list_labels = _sample_batch_lists(
                [train_queries[i] for i in batch_idx],
                tool_ids,
                tool_pos,
                config.list_length,
                rng,
            )
            losses, grad_q, grad_t = batch_objective(
                stack,
                query_base,
                tool_base,
                batch_idx,
                list_idx,
                list_labels,
                contrastive_weight=lam,
                temperature=config.temperature,
                pairwise=pairwise,
            )
            if not math.isfinite(losses.total):
                raise NumericalError(
                    f"non-finite loss at epoch {epoch}, batch {batch_no}"
                )
            if config.weight_decay > 0.0:
                query_base *= decay
                tool_base *= decay
            adam.step(params, {"queries": grad_q, "tools": grad_t})
            weight = len(batch_idx) / n_train
            sums += weight * np.array(
                [losses.listwise, losses.contrastive_queries, losses.contrastive_scenes]
            )
        if log_fn is not None:
            log_fn(
                EpochStats(
                    epoch=epoch,
                    listwise=float(sums[0]),
                    contrastive_queries=float(sums[1]),
                    contrastive_scenes=float(sums[2]),
                    total=float(sums.sum()),
                )
            )

    return model_from_state(
        stack,
        query_base,
        tool_base,
        config=config.to_dict(),
        mode=MODE_FULL,
        epochs_run=config.epochs,
    )


def _batch_slices(order: np.ndarray, batch_size: int) -> list[np.ndarray]:
    """Contiguous chunks of the shuffled order; a trailing single query is
    folded into the previous batch so contrastive terms always see >= 2."""
    chunks = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
    if len(chunks) > 1 and len(chunks[-1]) == 1:
        chunks[-2] = np.concatenate([chunks[-2], chunks[-1]])
        chunks.pop()
    return chunks


def _sample_batch_lists(
    queries: list[Query],
    tool_ids: Sequence[str],
    tool_pos: dict[str, int],
    list_length: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    list_idx = np.empty((len(queries), list_length), dtype=np.int64)
    labels = np.empty((len(queries), list_length), dtype=np.float64)
    for row, query in enumerate(queries):
        sample = sample_list(query, tool_ids, list_length, rng)
        list_idx[row] = [tool_pos[t] for t in sample.tool_ids]
        labels[row] = sample.labels
    return list_idx, labels
