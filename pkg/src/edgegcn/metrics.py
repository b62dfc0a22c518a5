"""Evaluation metrics: top-k recall, macro-F1@k, triplet recall, AUC.

Every ranking here breaks logit ties toward the lower class index, so
results are deterministic and match the brute-force oracles in the test
suite exactly. Metrics whose denominator is empty (no ground truth)
return ``None`` rather than inventing a number.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def top_k_classes(logits: np.ndarray, k: int) -> np.ndarray:
    """The k highest-scoring class indices per row, ties to lower index."""
    logits = np.asarray(logits)
    n, c = logits.shape
    if not 1 <= k <= c:
        raise ValueError(f"k must be in [1, {c}], got {k}")
    order = np.lexsort((np.arange(c)[None, :].repeat(n, 0), -logits), axis=1)
    return order[:, :k]


def recall_at_k(logits: np.ndarray, labels, k: int) -> float:
    """Fraction of rows whose true label ranks in the top k."""
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2 or logits.shape[0] == 0:
        raise ValueError("recall_at_k needs a non-empty 2-D logit matrix")
    top = top_k_classes(logits, k)
    return float((top == labels[:, None]).any(axis=1).mean())


def macro_f1_at_k(logits: np.ndarray, labels, k: int,
                  exclude_class: int | None = 0) -> float | None:
    """Macro-averaged F1 where each row predicts its top-k class set.

    Per class: TP counts rows of that class whose top-k contains it, FP
    counts rows of other classes whose top-k contains it, FN the rest of
    the class rows. The average runs over classes present in the ground
    truth, minus ``exclude_class`` (the background class by default,
    which would otherwise dominate). Returns None when no ground-truth
    class remains.
    """
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if logits.shape[0] == 0:
        return None
    top = top_k_classes(logits, k)
    classes = [c for c in np.unique(labels) if c != exclude_class]
    if not classes:
        return None
    scores = []
    for c in classes:
        in_top = (top == c).any(axis=1)
        is_c = labels == c
        tp = int((in_top & is_c).sum())
        fp = int((in_top & ~is_c).sum())
        fn = int((~in_top & is_c).sum())
        denom = 2 * tp + fp + fn
        if denom == 0:
            continue
        scores.append(2.0 * tp / denom)
    return float(np.mean(scores)) if scores else None


def triplet_recall(ranked, gt_triplets, k: int,
                   match_classes: bool = True) -> float | None:
    """|top-k predictions ∩ ground truth| / |ground truth|.

    ``ranked`` is the ordered candidate list from triplet assembly; the
    ground truth is an iterable of (subject, predicate, object,
    subject_class, object_class) tuples. A match requires all five
    fields by default; ``match_classes=False`` relaxes it to the id
    triple. Empty ground truth is undefined and returns None.
    """
    def key(t):
        if match_classes:
            return (t[0], t[1], t[2], t[3], t[4])
        return (t[0], t[1], t[2])

    gt = {key(t) for t in gt_triplets}
    if not gt:
        return None
    predicted = {key(t) for t in list(ranked)[:k]}
    return len(predicted & gt) / len(gt)


def binary_auc(scores: np.ndarray, labels) -> float:
    """Rank-based (Mann-Whitney) AUC; tied scores contribute one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("binary_auc needs both classes present")
    from scipy.stats import rankdata

    ranks = rankdata(np.concatenate([pos, neg]), method="average")
    rank_sum = ranks[: len(pos)].sum()
    u = rank_sum - len(pos) * (len(pos) + 1) / 2.0
    return float(u / (len(pos) * len(neg)))


@dataclass
class EvalReport:
    """Named scalar metrics for one evaluation pass.

    ``metrics`` values are in [0, 1] (absent metrics are simply not
    present); ``params`` records the k/K settings used; ``set_size`` is
    the number of scored items.
    """

    metrics: dict
    set_size: int
    params: dict = field(default_factory=dict)

    def flat(self) -> dict:
        out = {"set_size": self.set_size}
        out.update({f"param_{k}": v for k, v in sorted(self.params.items())})
        out.update(sorted(self.metrics.items()))
        return out


def reports_to_csv(reports) -> str:
    """Serialize reports as flat key-value CSV, one row per evaluation.

    The header is the union of keys across reports; missing entries are
    left blank.
    """
    rows = [r.flat() for r in reports]
    keys: list = []
    for row in rows:
        for k in row:
            if k not in keys:
                keys.append(k)
    lines = [",".join(keys)]
    for row in rows:
        lines.append(",".join(
            _format_cell(row[k]) if k in row else "" for k in keys
        ))
    return "\n".join(lines) + "\n"


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.10g}"
    return str(value)
