"""Training losses and their analytic gradients.

Everything here is written against plain float64 arrays so gradients can be
verified coordinate-by-coordinate with central finite differences.  The
list-wise loss interprets the predicted selection distribution as the softmax
of the scores within the list, matched against a uniform distribution over
the list's positives via a two-sided cross entropy.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .embeddings import EmbeddingTable
from .errors import DataError


def _check_list(scores: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise DataError("scores and labels must be equal-length 1-d arrays")
    if not np.all((labels == 0.0) | (labels == 1.0)):
        raise DataError("labels must be binary")
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == len(labels):
        raise DataError("list needs at least one positive and one negative")
    return scores, labels


def _list_distributions(scores: np.ndarray, labels: np.ndarray):
    p = labels / labels.sum()
    shifted = scores - scores.max()
    logq = shifted - np.log(np.exp(shifted).sum())
    q = np.exp(logq)
    return p, q, logq


def listwise_loss(scores: np.ndarray, labels: np.ndarray) -> float:
    """Cross entropy between the uniform-over-positives target distribution
    and the softmax of the predicted scores, summed over both sides of each
    binary term.  Shift-invariant in the scores and >= 0."""
    scores, labels = _check_list(scores, labels)
    p, q, logq = _list_distributions(scores, labels)
    with np.errstate(divide="ignore"):
        log1mq = np.log1p(-q)
    pos_term = np.where(p > 0.0, p * logq, 0.0)
    neg_term = np.where(p < 1.0, (1.0 - p) * log1mq, 0.0)
    return float(-(pos_term + neg_term).sum())


def listwise_loss_grad(scores: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Loss plus its gradient with respect to the scores."""
    scores, labels = _check_list(scores, labels)
    p, q, logq = _list_distributions(scores, labels)
    with np.errstate(divide="ignore"):
        log1mq = np.log1p(-q)
    pos_term = np.where(p > 0.0, p * logq, 0.0)
    neg_term = np.where(p < 1.0, (1.0 - p) * log1mq, 0.0)
    loss = float(-(pos_term + neg_term).sum())
    # gq[i] = q[i] * dloss/dq[i], assembled without dividing by q.
    gq = -p + q * (1.0 - p) / (1.0 - q)
    grad = gq - q * gq.sum()
    return loss, grad


def pairwise_logistic_loss(
    pos_scores: np.ndarray, neg_scores: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean logistic loss pairing each positive with one sampled negative.

    Positive i is paired with negative ``i mod len(neg)``; since the negative
    list itself is freshly sampled, this realizes one random (positive,
    negative) pair per positive.  Returns the loss and its gradients with
    respect to the two score vectors.  Used by the pair-wise training
    ablation.
    """
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64)
    if pos.ndim != 1 or neg.ndim != 1 or len(pos) == 0 or len(neg) == 0:
        raise DataError("need at least one positive and one negative score")
    paired = np.arange(len(pos)) % len(neg)
    diff = neg[paired] - pos
    count = len(pos)
    loss = float(np.logaddexp(0.0, diff).sum() / count)
    s = expit(diff)
    grad_pos = -s / count
    grad_neg = np.zeros_like(neg)
    np.add.at(grad_neg, paired, s / count)
    return loss, grad_pos, grad_neg


def _row_normalize(matrix: np.ndarray, side: str) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(matrix, axis=1)
    if np.any(norms == 0.0):
        raise DataError(f"zero-norm vector in {side} batch")
    return matrix / norms[:, None], norms


def _infonce_parts(anchors: np.ndarray, positives: np.ndarray, tau: float):
    anchors = np.asarray(anchors, dtype=np.float64)
    positives = np.asarray(positives, dtype=np.float64)
    if anchors.shape != positives.shape or anchors.ndim != 2:
        raise DataError("anchor and positive batches must be equal-shape matrices")
    if anchors.shape[0] < 2:
        raise DataError("in-batch contrastive loss needs a batch of >= 2")
    if tau <= 0.0:
        raise DataError(f"temperature must be positive, got {tau}")
    a_hat, a_norm = _row_normalize(anchors, "anchor")
    b_hat, b_norm = _row_normalize(positives, "positive")
    cos = a_hat @ b_hat.T
    scaled = cos / tau
    shift = scaled.max(axis=1, keepdims=True)
    logq = scaled - shift - np.log(np.exp(scaled - shift).sum(axis=1, keepdims=True))
    return a_hat, a_norm, b_hat, b_norm, cos, logq


def crossview_contrastive(anchors: np.ndarray, positives: np.ndarray, tau: float) -> float:
    """In-batch InfoNCE between two views of the same entities.

    Row i of ``anchors`` and row i of ``positives`` are the two views of one
    entity; every other row of ``positives`` acts as a negative.  Similarity
    is cosine scaled by ``tau``.
    """
    *_, logq = _infonce_parts(anchors, positives, tau)
    return float(-np.diagonal(logq).mean())


def crossview_contrastive_grad(
    anchors: np.ndarray, positives: np.ndarray, tau: float
) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss plus gradients with respect to both input matrices."""
    a_hat, a_norm, b_hat, b_norm, cos, logq = _infonce_parts(anchors, positives, tau)
    n = anchors.shape[0]
    loss = float(-np.diagonal(logq).mean())
    w = (np.exp(logq) - np.eye(n)) / (n * tau)  # dloss/dcos
    row_wc = (w * cos).sum(axis=1)
    col_wc = (w * cos).sum(axis=0)
    grad_a = (w @ b_hat - row_wc[:, None] * a_hat) / a_norm[:, None]
    grad_b = (w.T @ a_hat - col_wc[:, None] * b_hat) / b_norm[:, None]
    return loss, grad_a, grad_b


def crossview_contrastive_tables(
    anchor_table: EmbeddingTable,
    positive_table: EmbeddingTable,
    batch_ids: list[str],
    tau: float,
) -> float:
    """Id-level wrapper over :func:`crossview_contrastive`."""
    anchors = anchor_table.to_matrix(batch_ids)
    positives = positive_table.to_matrix(batch_ids)
    return crossview_contrastive(anchors, positives, tau)


def list_cosines(queries: np.ndarray, lists: np.ndarray):
    """Cosine of each query row against each row of its candidate list.

    ``queries`` is (B, d); ``lists`` is (B, L, d).  Returns the (B, L) cosine
    matrix plus a cache for the backward pass.
    """
    q_norm = np.linalg.norm(queries, axis=1)
    l_norm = np.linalg.norm(lists, axis=2)
    if np.any(q_norm == 0.0) or np.any(l_norm == 0.0):
        raise DataError("zero-norm vector in scoring batch")
    q_hat = queries / q_norm[:, None]
    l_hat = lists / l_norm[:, :, None]
    cos = np.einsum("bd,bld->bl", q_hat, l_hat)
    return cos, (q_hat, q_norm, l_hat, l_norm)


def list_cosines_back(grad_cos: np.ndarray, cos: np.ndarray, cache):
    """Backward for :func:`list_cosines`: gradients for queries and lists."""
    q_hat, q_norm, l_hat, l_norm = cache
    grad_q = (
        np.einsum("bl,bld->bd", grad_cos, l_hat)
        - (grad_cos * cos).sum(axis=1)[:, None] * q_hat
    ) / q_norm[:, None]
    grad_l = (
        grad_cos[:, :, None] * q_hat[:, None, :]
        - (grad_cos * cos)[:, :, None] * l_hat
    ) / l_norm[:, :, None]
    return grad_q, grad_l
