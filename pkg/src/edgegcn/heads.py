"""Pipeline stage 3: classification heads, joint loss, triplet assembly."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import tensor as T
from .optim import glorot, zeros
from .tensor import Tensor


@dataclass
class HeadParams:
    """A two-layer classifier squeezing C_in to C_in // 2 before the
    class logits. Node and edge heads share this structure but never
    their parameters."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def parameters(self) -> list:
        return [self.w1, self.b1, self.w2, self.b2]


def init_head(rng: np.random.Generator, c_in: int, c_out: int) -> HeadParams:
    hidden = c_in // 2
    return HeadParams(
        w1=glorot(rng, c_in, hidden),
        b1=zeros(hidden),
        w2=glorot(rng, hidden, c_out),
        b2=zeros(c_out),
    )


def node_head(x_v: Tensor, params: HeadParams) -> Tensor:
    """Object logits, one row per instance."""
    hidden = T.relu(T.matmul(x_v, params.w1) + params.b1)
    return T.matmul(hidden, params.w2) + params.b2


def edge_head(x_e: Tensor, params: HeadParams) -> Tensor:
    """Predicate logits for every ordered pair, (m, m, classes).

    Diagonal slots are computed like any other but carry no supervision
    and are skipped by loss and metrics.
    """
    m1, m2, c = x_e.shape
    flat = x_e.reshape((m1 * m2, c))
    hidden = T.relu(T.matmul(flat, params.w1) + params.b1)
    logits = T.matmul(hidden, params.w2) + params.b2
    return logits.reshape((m1, m2, params.w2.shape[1]))


def joint_loss(object_logits: Tensor, predicate_logits: Tensor | None,
               node_labels, edge_label_matrix=None) -> Tensor:
    """Node cross entropy plus predicate cross entropy over off-diagonal
    ordered pairs.

    ``edge_label_matrix`` is dense (m, m) with -1 on the diagonal (and
    anywhere else supervision should be skipped). Passing no predicate
    logits, or a single-instance scene, drops the edge term.
    """
    loss = T.softmax_cross_entropy(object_logits, np.asarray(node_labels))
    if predicate_logits is None:
        return loss
    m = predicate_logits.shape[0]
    if m < 2:
        warnings.warn("single-instance scene has no supervised pairs; "
                      "edge loss is 0", stacklevel=2)
        return loss
    if edge_label_matrix is None:
        raise ValueError("predicate logits given without edge labels")
    labels = np.asarray(edge_label_matrix, dtype=np.int64)
    if labels.shape != (m, m):
        raise T.ShapeError(
            f"edge labels shaped {labels.shape}, expected {(m, m)}"
        )
    flat_logits = predicate_logits.reshape(
        (m * m, predicate_logits.shape[2])
    )
    edge_loss = T.softmax_cross_entropy(
        flat_logits, labels.reshape(-1), ignore_label=-1
    )
    return loss + edge_loss


class Triplet(NamedTuple):
    """A scored relationship candidate; classes are the predicted top-1
    object classes of its endpoints."""

    subject: int
    predicate: int
    object: int
    subject_class: int
    object_class: int
    confidence: float


def triplet_confidences(object_probs: np.ndarray,
                        predicate_probs: np.ndarray) -> list:
    """Rank relationship candidates by joint confidence.

    For every ordered pair whose most likely predicate is not the
    background class, each non-background predicate p becomes a
    candidate scored P(subject top class) * P(p) * P(object top class).
    Pairs whose top predicate is background are dropped entirely, so a
    scene predicted fully unrelated yields an empty list. Sorted by
    descending confidence; ties break by (subject, object, predicate)
    ascending, making the ranking total and deterministic.
    """
    object_probs = np.asarray(object_probs)
    predicate_probs = np.asarray(predicate_probs)
    m = object_probs.shape[0]
    top_class = object_probs.argmax(axis=1)  # argmax favors lower class ids
    top_prob = object_probs[np.arange(m), top_class]
    candidates = []
    for i in range(m):
        for j in range(m):
            if i == j:
                continue
            pair = predicate_probs[i, j]
            if int(pair.argmax()) == 0:
                continue
            for p in range(1, pair.shape[0]):
                confidence = float(top_prob[i] * pair[p] * top_prob[j])
                candidates.append(Triplet(
                    subject=i, predicate=p, object=j,
                    subject_class=int(top_class[i]),
                    object_class=int(top_class[j]),
                    confidence=confidence,
                ))
    candidates.sort(
        key=lambda t: (-t.confidence, t.subject, t.object, t.predicate)
    )
    return candidates
