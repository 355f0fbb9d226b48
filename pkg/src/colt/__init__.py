"""colt: completeness-oriented tool retrieval.

Learns dual-view graph-collaborative representations for queries, scenes
(co-occurring tool sets), and tools on top of semantic text embeddings, then
retrieves tool sets scored by the sum of scene-view and tool-view cosines.
"""

__version__ = "0.1.0"

from .corpus import Corpus, Query, Scene, SceneTable, Tool, derive_scenes, load_corpus, split
from .embeddings import EmbeddingTable, cosine, hash_embed, load_embeddings, save_embeddings
from .errors import ColtError, DataError, NumericalError, UsageError
from .graph import BipartiteGraph, propagate, propagate_scene_view, propagate_tool_view
from .metrics import EvalReport, comp_at_k, evaluate, ndcg_at_k, recall_at_k
from .model import DualViewStack, TrainedModel
from .retrieval import RankedList, retrieve_topk, score
from .training import TrainConfig, train

__all__ = [
    "BipartiteGraph",
    "ColtError",
    "Corpus",
    "DataError",
    "DualViewStack",
    "EmbeddingTable",
    "EvalReport",
    "NumericalError",
    "Query",
    "RankedList",
    "Scene",
    "SceneTable",
    "Tool",
    "TrainConfig",
    "TrainedModel",
    "UsageError",
    "comp_at_k",
    "cosine",
    "derive_scenes",
    "evaluate",
    "hash_embed",
    "load_corpus",
    "load_embeddings",
    "ndcg_at_k",
    "propagate",
    "propagate_scene_view",
    "propagate_tool_view",
    "recall_at_k",
    "retrieve_topk",
    "save_embeddings",
    "score",
    "split",
    "train",
]
