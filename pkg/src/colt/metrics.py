"""Retrieval quality metrics: Recall@K, NDCG@K, and the completeness rate.

The completeness indicator asks whether the *entire* gold tool set sits
inside the top-K list; its corpus-level value is the fraction of queries for
which that holds.  NDCG uses binary gains with the 1/log2(rank+1) discount.
Corpus means use exact compensated summation so aggregation order never
changes a reported value.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .corpus import Corpus
from .errors import DataError


def _check_gold(gold: Iterable[str]) -> set[str]:
    gold_set = set(gold)
    if not gold_set:
        raise DataError("gold tool set must be non-empty")
    return gold_set


def recall_at_k(gold: Iterable[str], retrieved: Sequence[str], k: int) -> float:
    gold_set = _check_gold(gold)
    hits = gold_set.intersection(retrieved[:k])
    return len(hits) / len(gold_set)


def ndcg_at_k(gold: Iterable[str], retrieved: Sequence[str], k: int) -> float:
    gold_set = _check_gold(gold)
    dcg = 0.0
    for rank, tool in enumerate(retrieved[:k], start=1):
        if tool in gold_set:
            dcg += 1.0 / math.log2(rank + 1)
    ideal_hits = min(k, len(gold_set))
    idcg = sum(1.0 / math.log2(r + 1) for r in range(1, ideal_hits + 1))
    return dcg / idcg


def comp_at_k(gold: Iterable[str], retrieved: Sequence[str], k: int) -> int:
    """1 iff every gold tool appears in the top-K, else 0.

    K smaller than the gold set size is allowed and yields 0, which the
    per-gold-size breakdowns rely on.
    """
    gold_set = _check_gold(gold)
    return 1 if gold_set.issubset(retrieved[:k]) else 0


METRIC_FNS = {
    "recall": recall_at_k,
    "ndcg": ndcg_at_k,
    "comp": comp_at_k,
}


@dataclass
class GroupReport:
    count: int
    values: dict[str, dict[int, float]]
    at_n: dict[str, float]


@dataclass
class EvalReport:
    query_count: int
    ks: tuple[int, ...]
    values: dict[str, dict[int, float]]
    at_n: dict[str, float] = field(default_factory=dict)
    groups: dict[int, GroupReport] = field(default_factory=dict)

    def to_dict(self) -> dict:
        out: dict = {
            "query_count": self.query_count,
            "ks": list(self.ks),
            "metrics": {
                m: {str(k): v for k, v in per_k.items()}
                for m, per_k in self.values.items()
            },
        }
        if self.at_n:
            out["at_n"] = dict(self.at_n)
        if self.groups:
            out["breakdown"] = {
                str(size): {
                    "count": g.count,
                    "metrics": {
                        m: {str(k): v for k, v in per_k.items()}
                        for m, per_k in g.values.items()
                    },
                    "at_n": dict(g.at_n),
                }
                for size, g in self.groups.items()
            }
        return out

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )


def _mean(values: list[float]) -> float:
    return math.fsum(values) / len(values) if values else 0.0


def evaluate(
    run: Mapping[str, Sequence[str]],
    corpus: Corpus,
    ks: Sequence[int],
    breakdown: bool = False,
    split: str = "test",
) -> EvalReport:
    """Aggregate the three metrics over the queries of one split.

    ``run`` maps query_id to a ranked tool list and must cover every query
    of the split.  With ``breakdown`` set, queries are also grouped by gold
    set size and the size-matched @|N| variants (K = |gold| per query) are
    reported.
    """
    if not ks or any(k < 1 for k in ks):
        raise DataError(f"ks must be positive integers, got {list(ks)}")
    queries = [q for q in corpus.queries.values() if q.split == split]
    if not queries:
        raise DataError(f"no queries in split {split!r}")
    missing = [q.query_id for q in queries if q.query_id not in run]
    if missing:
        shown = ", ".join(missing[:10])
        more = f" (+{len(missing) - 10} more)" if len(missing) > 10 else ""
        raise DataError(f"retrieval run is missing queries: {shown}{more}")

    ks = tuple(ks)
    per_query: dict[str, dict[int, list[float]]] = {
        m: {k: [] for k in ks} for m in METRIC_FNS
    }
    per_query_at_n: dict[str, list[float]] = {m: [] for m in METRIC_FNS}
    group_rows: dict[int, list[str]] = {}

    for q in queries:
        retrieved = run[q.query_id]
        for m, fn in METRIC_FNS.items():
            for k in ks:
                per_query[m][k].append(float(fn(q.gold_tools, retrieved, k)))
            per_query_at_n[m].append(
                float(fn(q.gold_tools, retrieved, len(q.gold_tools)))
            )
        group_rows.setdefault(len(q.gold_tools), []).append(q.query_id)

    values = {
        m: {k: _mean(vals) for k, vals in per_k.items()}
        for m, per_k in per_query.items()
    }
    report = EvalReport(query_count=len(queries), ks=ks, values=values)

    if breakdown:
        report.at_n = {m: _mean(v) for m, v in per_query_at_n.items()}
        index_of = {q.query_id: i for i, q in enumerate(queries)}
        for size in sorted(group_rows):
            rows = [index_of[qid] for qid in group_rows[size]]
            g_values = {
                m: {k: _mean([per_query[m][k][i] for i in rows]) for k in ks}
                for m in METRIC_FNS
            }
            g_at_n = {m: _mean([per_query_at_n[m][i] for i in rows]) for m in METRIC_FNS}
            report.groups[size] = GroupReport(
                count=len(rows), values=g_values, at_n=g_at_n
            )
    return report
