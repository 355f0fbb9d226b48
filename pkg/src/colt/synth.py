"""Synthetic benchmark corpus with deliberately ambiguous semantics.

Tools come in fixed bundles that always act together; bundles are paired and
each pair shares a vocabulary pool, so hashed text similarity confuses tools
across the paired bundles.  A weak per-bundle signature word is the only
text-level disambiguator.  Retrieval that ignores tool co-occurrence tends to
assemble top-K lists mixing the two bundles of a pair and therefore misses
completeness, which is exactly the failure mode this corpus is built to
expose.
"""

from __future__ import annotations

import numpy as np

from .corpus import Corpus, Query, Tool
from .errors import DataError

_LETTERS = "abcdefghijklmnopqrstuvwxyz"


def _fresh_words(rng: np.random.Generator, count: int, taken: set[str], length: int = 6) -> list[str]:
    words: list[str] = []
    while len(words) < count:
        w = "".join(_LETTERS[i] for i in rng.integers(0, 26, size=length))
        if w not in taken:
            taken.add(w)
            words.append(w)
    return words


def bundle_corpus(
    n_pairs: int = 10,
    tools_per_bundle: int = 3,
    queries_per_bundle: int = 15,
    pool_size: int = 12,
    desc_pool_words: int = 4,
    query_pool_words: int = 5,
    noise_words: int = 2,
    quiet_tools: int = 1,
    confusable_signatures: bool = False,
    noisy_quiet_tools: bool = False,
    shared_pools: int | None = None,
    seed: int = 0,
) -> Corpus:
    """Generate the bundled-tool corpus (queries carry no split tags).

    Defaults give 2*n_pairs = 20 bundles of 3 tools (60 tools) and 300
    queries whose gold set is always a whole bundle.  The first
    ``quiet_tools`` tools of each bundle get descriptions with no shared
    vocabulary at all, so nothing but co-occurrence with the rest of the
    bundle can surface them.  ``confusable_signatures`` makes the two
    signature words of a pair share a long stem (nearly identical trigram
    profiles); ``noisy_quiet_tools`` mixes the quiet descriptions from the
    global noise vocabulary instead of fresh words, so they carry misleading
    similarity to random queries of every bundle.  ``shared_pools`` cycles a
    reduced number of distinct vocabulary pools across the bundle pairs
    (1 makes every bundle draw from one global pool, so every loud tool
    crowds every query).
    """
    if n_pairs < 1 or tools_per_bundle < 1 or queries_per_bundle < 1:
        raise DataError("bundle corpus parameters must be positive")
    if quiet_tools >= tools_per_bundle:
        raise DataError("at least one tool per bundle must share query vocabulary")
    if shared_pools is None:
        shared_pools = n_pairs
    if not 1 <= shared_pools <= n_pairs:
        raise DataError("shared_pools must lie in [1, n_pairs]")
    rng = np.random.default_rng(seed)
    taken: set[str] = set()
    n_bundles = 2 * n_pairs

    distinct_pools = [_fresh_words(rng, pool_size, taken) for _ in range(shared_pools)]
    pair_pools = [distinct_pools[p % shared_pools] for p in range(n_pairs)]
    if confusable_signatures:
        signatures = []
        for stem in _fresh_words(rng, n_pairs, taken, length=5):
            for suffix in _fresh_words(rng, 2, taken, length=2):
                signatures.append(stem + suffix)
    else:
        signatures = _fresh_words(rng, n_bundles, taken)
    global_noise = _fresh_words(rng, 20, taken)

    tools: dict[str, Tool] = {}
    bundles: list[list[str]] = []
    for b in range(n_bundles):
        pool = pair_pools[b // 2]
        members: list[str] = []
        for k in range(tools_per_bundle):
            tid = f"t{b:02d}_{k}"
            if k < quiet_tools:
                if noisy_quiet_tools:
                    words = [
                        global_noise[i]
                        for i in rng.choice(len(global_noise), size=2 + desc_pool_words, replace=False)
                    ]
                else:
                    words = _fresh_words(rng, 2 + desc_pool_words, taken)
            else:
                unique = _fresh_words(rng, 1, taken)[0]
                shared = [pool[i] for i in rng.choice(pool_size, size=desc_pool_words, replace=False)]
                words = [signatures[b], unique] + shared
            tools[tid] = Tool(
                tool_id=tid,
                name=f"tool-{b:02d}-{k}",
                description=" ".join(words),
            )
            members.append(tid)
        bundles.append(members)

    queries: dict[str, Query] = {}
    qno = 0
    for b in range(n_bundles):
        pool = pair_pools[b // 2]
        for _ in range(queries_per_bundle):
            shared = [pool[i] for i in rng.choice(pool_size, size=query_pool_words, replace=False)]
            noise = [global_noise[i] for i in rng.choice(len(global_noise), size=noise_words, replace=False)]
            words = [signatures[b]] + shared + noise
            qid = f"q{qno:04d}"
            qno += 1
            queries[qid] = Query(
                query_id=qid,
                text=" ".join(words),
                gold_tools=tuple(bundles[b]),
            )

    return Corpus(tools=tools, queries=queries)
