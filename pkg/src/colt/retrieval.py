"""Dual-view scoring and exact top-K retrieval.

Trained queries are scored with their propagated representations; unseen
queries fall back to their semantic vector for both views, which is the
layer-0 term of the propagation sums (an unseen query has no graph edges).
Ranking is an exact scan over the full tool set with a lexicographic
tool-id tie-break.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .embeddings import cosine
from .errors import DataError
from .model import MODE_PASSTHROUGH, TrainedModel


@dataclass
class RankedList:
    query_id: str
    entries: tuple[tuple[str, float], ...]  # (tool_id, score), best first
    k: int


def score(
    query_repr: tuple[np.ndarray, np.ndarray], tool_repr: np.ndarray
) -> float:
    """Sum of the two view cosines; bounded by [-2, 2]."""
    scene_vec, tool_vec = query_repr
    return cosine(scene_vec, tool_repr) + cosine(tool_vec, tool_repr)


def query_representation(
    model: TrainedModel,
    query_id: str | None = None,
    semantic: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Pick the representation pair for a query.

    A query the model was trained on uses its propagated scene-view and
    tool-view vectors.  Anything else must supply a semantic vector, which is
    used for both views.
    """
    if query_id is not None and query_id in model.query_scene_view:
        return model.query_scene_view[query_id], model.query_tool_view[query_id]
    if semantic is None:
        raise DataError(
            f"query {query_id!r} was not trained on and no semantic vector was given"
        )
    semantic = np.asarray(semantic, dtype=np.float64)
    return semantic, semantic


def _score_matrix(
    model: TrainedModel, reprs: tuple[np.ndarray, np.ndarray]
) -> np.ndarray:
    """Scores against every tool, in the model's tool order."""
    tools = model.tool_view.to_matrix(model.tool_ids)
    norms = np.linalg.norm(tools, axis=1)
    if np.any(norms == 0.0):
        bad = model.tool_ids[int(np.argmin(norms))]
        raise DataError(f"zero-norm tool representation for {bad}")
    tools_hat = tools / norms[:, None]

    scene_vec, tool_vec = reprs
    if model.mode == MODE_PASSTHROUGH:
        # Semantic-only scoring: a single cosine against the semantic table.
        views = [scene_vec]
    else:
        views = [scene_vec, tool_vec]
    total = np.zeros(len(tools))
    for vec in views:
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            raise DataError("zero-norm query vector")
        total += tools_hat @ (vec / norm)
    return total


def retrieve_topk(
    model: TrainedModel,
    k: int,
    query_id: str | None = None,
    semantic: np.ndarray | None = None,
) -> RankedList:
    """Exact top-K by full scan; ties break on ascending tool_id."""
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    reprs = query_representation(model, query_id=query_id, semantic=semantic)
    scores = _score_matrix(model, reprs)
    ranked = sorted(zip(model.tool_ids, scores), key=lambda e: (-e[1], e[0]))
    top = tuple((tid, float(s)) for tid, s in ranked[: min(k, len(ranked))])
    return RankedList(query_id=query_id or "", entries=top, k=k)


def write_run(ranked_lists: Iterable[RankedList], path: str | Path) -> None:
    """Retrieval output file: one JSON object per query."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for rl in ranked_lists:
            fh.write(format_ranked_line(rl) + "\n")


def format_ranked_line(rl: RankedList) -> str:
    return json.dumps(
        {
            "query_id": rl.query_id,
            "tools": [{"tool_id": t, "score": s} for t, s in rl.entries],
        }
    )


def read_run(path: str | Path) -> dict[str, list[str]]:
    """Load a retrieval output file into query_id -> ranked tool ids."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    run: dict[str, list[str]] = {}
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed JSON: {exc.msg}") from exc
            qid = obj.get("query_id")
            tools = obj.get("tools")
            if not isinstance(qid, str) or not isinstance(tools, list):
                raise DataError(f"{path}:{lineno}: need 'query_id' and 'tools'")
            run[qid] = [entry["tool_id"] for entry in tools]
    return run


def batch_retrieve(
    model: TrainedModel,
    queries: Sequence[tuple[str, np.ndarray | None]],
    k: int,
) -> list[RankedList]:
    """Retrieve for (query_id, semantic_or_None) pairs, preserving order."""
    out = []
    for qid, semantic in queries:
        rl = retrieve_topk(model, k, query_id=qid, semantic=semantic)
        out.append(RankedList(query_id=qid, entries=rl.entries, k=k))
    return out
