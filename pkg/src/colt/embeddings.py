"""Embedding tables, cosine similarity, and the built-in hashed text embedder.

Initial query/tool vectors either come from an export file produced by the
semantic training stage, or from :func:`hash_embed`, a deterministic
character-trigram feature-hashing embedder that needs no model weights.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError

logger = logging.getLogger(__name__)

MIN_DIM = 2


@dataclass
class EmbeddingTable:
    """id -> dense float64 vector, all rows sharing one dimensionality."""

    dim: int
    rows: dict[str, np.ndarray]

    def __post_init__(self) -> None:
        if self.dim < MIN_DIM:
            raise DataError(f"embedding dim must be >= {MIN_DIM}, got {self.dim}")
        for key, vec in self.rows.items():
            vec = np.asarray(vec, dtype=np.float64)
            if vec.shape != (self.dim,):
                raise DataError(
                    f"row {key} has shape {vec.shape}, expected ({self.dim},)"
                )
            if not np.all(np.isfinite(vec)):
                raise DataError(f"row {key} contains non-finite values")
            self.rows[key] = vec

    def __len__(self) -> int:
        return len(self.rows)

    def __contains__(self, key: str) -> bool:
        return key in self.rows

    def __getitem__(self, key: str) -> np.ndarray:
        try:
            return self.rows[key]
        except KeyError:
            raise DataError(f"no embedding for id {key}") from None

    def ids(self) -> list[str]:
        return list(self.rows)

    def to_matrix(self, ids: Sequence[str]) -> np.ndarray:
        """Stack rows in the given id order into an (n, dim) matrix."""
        return np.stack([self[i] for i in ids]) if ids else np.zeros((0, self.dim))

    @classmethod
    def from_matrix(cls, ids: Sequence[str], matrix: np.ndarray) -> "EmbeddingTable":
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != len(ids):
            raise DataError("matrix shape does not match id count")
        return cls(dim=int(matrix.shape[1]), rows={i: matrix[k].copy() for k, i in enumerate(ids)})


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity of two equal-dimension vectors, in [-1, 1].

    Zero-norm vectors are rejected: they indicate upstream corruption and the
    similarity is undefined there.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DataError(f"cosine needs equal-dim vectors, got {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise DataError("cosine undefined for a zero-norm vector")
    value = float(np.dot(a, b) / (na * nb))
    # Guard against |value| creeping past 1 by a few ulps.
    return min(1.0, max(-1.0, value))


def _bucket_sign(seed: int, which: int, gram: str, dim: int) -> tuple[int, float]:
    digest = hashlib.blake2b(
        f"{seed}:{which}:{gram}".encode("utf-8"), digest_size=9
    ).digest()
    bucket = int.from_bytes(digest[:8], "big") % dim
    sign = 1.0 if digest[8] & 1 else -1.0
    return bucket, sign


def hash_embed(text: str, dim: int = 128, seed: int = 0) -> np.ndarray:
    """Deterministic text embedding from signed character-trigram hashing.

    Each trigram of ``#text#`` feeds two hash functions; every hit adds +-1 to
    a bucket, and the result is L2-normalized.  Texts too short to produce a
    trigram (in particular the empty string) fall back to basis vector 0 so
    callers never receive a zero-norm vector.
    """
    if dim < MIN_DIM:
        raise DataError(f"embedding dim must be >= {MIN_DIM}, got {dim}")
    vec = np.zeros(dim, dtype=np.float64)
    padded = f"#{text}#"
    for i in range(len(padded) - 2):
        gram = padded[i : i + 3]
        for which in (0, 1):
            bucket, sign = _bucket_sign(seed, which, gram, dim)
            vec[bucket] += sign
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        vec[0] = 1.0
        return vec
    return vec / norm


def embed_texts(
    items: Iterable[tuple[str, str]], dim: int = 128, seed: int = 0
) -> EmbeddingTable:
    """hash_embed over (id, text) pairs."""
    rows = {key: hash_embed(text, dim=dim, seed=seed) for key, text in items}
    return EmbeddingTable(dim=dim, rows=rows)


def save_embeddings(table: EmbeddingTable, path: str | Path, entity: str) -> None:
    """Write the line-delimited embedding format (header line, then rows).

    Floats are serialized with repr-level precision, so a load after save
    reproduces the vectors bit-exactly.
    """
    if entity not in ("query", "tool"):
        raise DataError(f"entity must be 'query' or 'tool', got {entity!r}")
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(json.dumps({"dim": table.dim, "entity": entity}) + "\n")
        for key, vec in table.rows.items():
            fh.write(json.dumps({"id": key, "vector": vec.tolist()}) + "\n")


def load_embeddings(
    path: str | Path, expected_ids: Iterable[str] | None = None
) -> EmbeddingTable:
    """Load an embedding file, checking coverage of ``expected_ids``.

    Missing ids raise (listing up to 10); extra ids are dropped with a logged
    warning count.  With ``expected_ids=None`` every row is kept.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    with path.open("r", encoding="utf-8") as fh:
        header_line = fh.readline().strip()
        if not header_line:
            raise DataError(f"{path}: empty embedding file")
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:1: malformed header: {exc.msg}") from exc
        dim = header.get("dim")
        if not isinstance(dim, int) or dim < MIN_DIM:
            raise DataError(f"{path}: header must declare integer dim >= {MIN_DIM}")

        rows: dict[str, np.ndarray] = {}
        for lineno, raw in enumerate(fh, start=2):
            line = raw.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed JSON: {exc.msg}") from exc
            key = obj.get("id")
            vector = obj.get("vector")
            if not isinstance(key, str) or not isinstance(vector, list):
                raise DataError(f"{path}:{lineno}: need 'id' and 'vector' fields")
            if len(vector) != dim:
                raise DataError(
                    f"{path}:{lineno}: vector for {key} has dim {len(vector)}, "
                    f"header declares {dim}"
                )
            if key in rows:
                raise DataError(f"{path}:{lineno}: duplicate id {key}")
            rows[key] = np.asarray(vector, dtype=np.float64)

    if expected_ids is not None:
        expected = list(expected_ids)
        missing = [i for i in expected if i not in rows]
        if missing:
            shown = ", ".join(missing[:10])
            more = f" (+{len(missing) - 10} more)" if len(missing) > 10 else ""
            raise DataError(f"{path}: missing embeddings for: {shown}{more}")
        extra = len(rows) - len(set(expected) & set(rows))
        if extra:
            logger.warning("%s: ignoring %d embedding rows with unexpected ids", path, extra)
        rows = {i: rows[i] for i in expected}

    return EmbeddingTable(dim=dim, rows=rows)
