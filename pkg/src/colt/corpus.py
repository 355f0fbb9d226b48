"""Corpus loading, validation, splitting, and scene derivation.

A corpus is a tool table plus a query table.  Each query carries the set of
tools required to answer it.  Distinct ground-truth tool sets of the training
queries are promoted to first-class "scene" nodes, and three bipartite edge
lists (query-scene, query-tool, scene-tool) are derived from them.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator

from .errors import DataError

SPLIT_TRAIN = "train"
SPLIT_TEST = "test"


@dataclass(frozen=True)
class Tool:
    tool_id: str
    name: str
    description: str


@dataclass(frozen=True)
class Query:
    query_id: str
    text: str
    gold_tools: tuple[str, ...]
    split: str | None = None  # None until a split is assigned


@dataclass(frozen=True)
class Scene:
    scene_id: str
    member_tools: tuple[str, ...]  # sorted, non-empty

    @property
    def member_set(self) -> frozenset[str]:
        return frozenset(self.member_tools)


@dataclass
class Corpus:
    """Immutable after construction; iteration follows insertion order."""

    tools: dict[str, Tool]
    queries: dict[str, Query]

    @property
    def n_tools(self) -> int:
        return len(self.tools)

    @property
    def n_queries(self) -> int:
        return len(self.queries)

    def tool_ids(self) -> list[str]:
        return list(self.tools)

    def train_queries(self) -> list[Query]:
        return [q for q in self.queries.values() if q.split == SPLIT_TRAIN]

    def test_queries(self) -> list[Query]:
        return [q for q in self.queries.values() if q.split == SPLIT_TEST]

    def validate(self) -> None:
        for q in self.queries.values():
            if not q.gold_tools:
                raise DataError(f"query {q.query_id} has an empty gold tool set")
            if len(set(q.gold_tools)) != len(q.gold_tools):
                raise DataError(f"query {q.query_id} repeats a tool in gold_tools")
            for tid in q.gold_tools:
                if tid not in self.tools:
                    raise DataError(
                        f"query {q.query_id} references unknown tool_id {tid}"
                    )


@dataclass
class SceneTable:
    """Scenes derived from the train split, plus the three bipartite edge lists."""

    scenes: dict[str, Scene]
    scene_of_query: dict[str, str]
    qs_edges: list[tuple[str, str]] = field(default_factory=list)
    qt_edges: list[tuple[str, str]] = field(default_factory=list)
    st_edges: list[tuple[str, str]] = field(default_factory=list)

    @property
    def n_scenes(self) -> int:
        return len(self.scenes)

    def scene_ids(self) -> list[str]:
        return list(self.scenes)


def _read_jsonl(path: str | Path) -> Iterator[tuple[int, dict]]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed JSON: {exc.msg}") from exc
            if not isinstance(obj, dict):
                raise DataError(f"{path}:{lineno}: expected an object per line")
            yield lineno, obj


def _require_str(obj: dict, key: str, where: str) -> str:
    value = obj.get(key)
    if not isinstance(value, str) or not value:
        raise DataError(f"{where}: field {key!r} must be a non-empty string")
    return value


def load_corpus(tools_path: str | Path, queries_path: str | Path) -> Corpus:
    """Load a corpus from the two line-delimited JSON files.

    Tool records need ``tool_id``, ``name``, ``description``; query records
    need ``query_id``, ``text``, ``tool_ids`` and may carry an explicit
    ``split``.  Gold tool lists are deduplicated preserving first occurrence.
    """
    tools: dict[str, Tool] = {}
    for lineno, obj in _read_jsonl(tools_path):
        where = f"{tools_path}:{lineno}"
        tid = _require_str(obj, "tool_id", where)
        name = obj.get("name", "")
        if not isinstance(name, str):
            raise DataError(f"{where}: field 'name' must be a string")
        desc = _require_str(obj, "description", where)
        if tid in tools:
            raise DataError(f"{where}: duplicate tool_id {tid}")
        tools[tid] = Tool(tool_id=tid, name=name, description=desc)

    queries: dict[str, Query] = {}
    for lineno, obj in _read_jsonl(queries_path):
        where = f"{queries_path}:{lineno}"
        qid = _require_str(obj, "query_id", where)
        text = _require_str(obj, "text", where)
        raw_ids = obj.get("tool_ids")
        if not isinstance(raw_ids, list) or not all(isinstance(t, str) for t in raw_ids):
            raise DataError(f"{where}: field 'tool_ids' must be an array of strings")
        gold = tuple(dict.fromkeys(raw_ids))
        if not gold:
            raise DataError(f"{where}: query {qid} has no gold tools")
        for tid in gold:
            if tid not in tools:
                raise DataError(f"{where}: unknown tool_id {tid}")
        split = obj.get("split")
        if split is not None and split not in (SPLIT_TRAIN, SPLIT_TEST):
            raise DataError(f"{where}: split must be 'train' or 'test', got {split!r}")
        if qid in queries:
            raise DataError(f"{where}: duplicate query_id {qid}")
        queries[qid] = Query(query_id=qid, text=text, gold_tools=gold, split=split)

    corpus = Corpus(tools=tools, queries=queries)
    corpus.validate()
    return corpus


def split(corpus: Corpus, test_fraction: float, seed: int) -> Corpus:
    """Assign train/test tags to every query, deterministically under ``seed``.

    Queries that arrived with an explicit split keep it; the remaining ones
    are partitioned so that round(test_fraction * n_untagged) of them land in
    the test split.  Each side ends up with at least one query.
    """
    if not 0.0 < test_fraction < 1.0:
        raise DataError(f"test_fraction must be in (0, 1), got {test_fraction}")
    if corpus.n_queries < 2:
        raise DataError("splitting needs at least 2 queries")

    untagged = [qid for qid, q in corpus.queries.items() if q.split is None]
    n_tagged_test = sum(1 for q in corpus.queries.values() if q.split == SPLIT_TEST)
    n_tagged_train = sum(1 for q in corpus.queries.values() if q.split == SPLIT_TRAIN)

    n_test = int(round(test_fraction * len(untagged)))
    # Clamp so that neither side of the final partition is empty.
    if n_tagged_test + n_test == 0 and untagged:
        n_test = 1
    if n_tagged_train + (len(untagged) - n_test) == 0 and untagged:
        n_test = len(untagged) - 1

    shuffled = list(untagged)
    random.Random(seed).shuffle(shuffled)
    test_ids = set(shuffled[:n_test])

    queries: dict[str, Query] = {}
    for qid, q in corpus.queries.items():
        if q.split is not None:
            queries[qid] = q
        else:
            tag = SPLIT_TEST if qid in test_ids else SPLIT_TRAIN
            queries[qid] = replace(q, split=tag)

    out = Corpus(tools=dict(corpus.tools), queries=queries)
    if not out.train_queries() or not out.test_queries():
        raise DataError("split produced an empty train or test side")
    return out


def derive_scenes(corpus: Corpus) -> SceneTable:
    """Deduplicate train-query gold sets into scenes and build the edge lists.

    Scene identity is exact set equality of gold tool sets.  Test queries
    contribute no edges.  Scene ids follow first appearance over the train
    queries in insertion order.
    """
    train = corpus.train_queries()
    if not train:
        raise DataError("cannot derive scenes: train split is empty")

    scenes: dict[str, Scene] = {}
    by_members: dict[frozenset[str], str] = {}
    scene_of_query: dict[str, str] = {}
    qs_edges: list[tuple[str, str]] = []
    qt_edges: list[tuple[str, str]] = []

    for q in train:
        members = frozenset(q.gold_tools)
        sid = by_members.get(members)
        if sid is None:
            sid = f"s{len(scenes)}"
            by_members[members] = sid
            scenes[sid] = Scene(scene_id=sid, member_tools=tuple(sorted(members)))
        scene_of_query[q.query_id] = sid
        qs_edges.append((q.query_id, sid))
        for tid in q.gold_tools:
            qt_edges.append((q.query_id, tid))

    st_edges = [
        (sid, tid) for sid, scene in scenes.items() for tid in scene.member_tools
    ]
    return SceneTable(
        scenes=scenes,
        scene_of_query=scene_of_query,
        qs_edges=qs_edges,
        qt_edges=qt_edges,
        st_edges=st_edges,
    )


def save_corpus(corpus: Corpus, tools_path: str | Path, queries_path: str | Path) -> None:
    with Path(tools_path).open("w", encoding="utf-8") as fh:
        for t in corpus.tools.values():
            fh.write(json.dumps(
                {"tool_id": t.tool_id, "name": t.name, "description": t.description},
                ensure_ascii=False) + "\n")
    with Path(queries_path).open("w", encoding="utf-8") as fh:
        for q in corpus.queries.values():
            rec = {"query_id": q.query_id, "text": q.text, "tool_ids": list(q.gold_tools)}
            if q.split is not None:
                rec["split"] = q.split
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def save_scene_table(table: SceneTable, scenes_path: str | Path) -> None:
    with Path(scenes_path).open("w", encoding="utf-8") as fh:
        for s in table.scenes.values():
            fh.write(json.dumps(
                {"scene_id": s.scene_id, "tool_ids": list(s.member_tools)}) + "\n")


def load_scene_table(scenes_path: str | Path, corpus: Corpus) -> SceneTable:
    """Rebuild a SceneTable from a scenes file plus the (split) corpus.

    Edge lists are reconstructed from the train queries, so the corpus must
    carry the same split the scenes were derived from.
    """
    scenes: dict[str, Scene] = {}
    by_members: dict[frozenset[str], str] = {}
    for lineno, obj in _read_jsonl(scenes_path):
        where = f"{scenes_path}:{lineno}"
        sid = _require_str(obj, "scene_id", where)
        raw = obj.get("tool_ids")
        if not isinstance(raw, list) or not raw:
            raise DataError(f"{where}: 'tool_ids' must be a non-empty array")
        members = frozenset(raw)
        if members in by_members:
            raise DataError(f"{where}: duplicate scene member set")
        if sid in scenes:
            raise DataError(f"{where}: duplicate scene_id {sid}")
        scenes[sid] = Scene(scene_id=sid, member_tools=tuple(sorted(members)))
        by_members[members] = sid

    scene_of_query: dict[str, str] = {}
    qs_edges: list[tuple[str, str]] = []
    qt_edges: list[tuple[str, str]] = []
    for q in corpus.train_queries():
        members = frozenset(q.gold_tools)
        sid = by_members.get(members)
        if sid is None:
            raise DataError(
                f"train query {q.query_id} has no scene in {scenes_path}"
            )
        scene_of_query[q.query_id] = sid
        qs_edges.append((q.query_id, sid))
        for tid in q.gold_tools:
            qt_edges.append((q.query_id, tid))

    st_edges = [
        (sid, tid) for sid, scene in scenes.items() for tid in scene.member_tools
    ]
    return SceneTable(
        scenes=scenes,
        scene_of_query=scene_of_query,
        qs_edges=qs_edges,
        qt_edges=qt_edges,
        st_edges=st_edges,
    )


def save_edge_list(edges: Iterable[tuple[str, str]], path: str | Path) -> None:
    """Edge-list dump, one ``left_id<TAB>right_id`` line per edge."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for left, right in edges:
            fh.write(f"{left}\t{right}\n")
