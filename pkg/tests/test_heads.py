"""Prediction heads, the joint objective, and triplet assembly."""

import numpy as np
import pytest

from edgegcn.heads import (
    Triplet,
    edge_head,
    init_head,
    joint_loss,
    node_head,
    triplet_confidences,
)
from edgegcn.optim import grad_check
from edgegcn.tensor import ShapeError, Tensor


def mlp_oracle(x, params):
    h = np.maximum(x @ params.w1.data + params.b1.data, 0.0)
    return h @ params.w2.data + params.b2.data


def test_node_head_matches_mlp_oracle():
    rng = np.random.default_rng(0)
    params = init_head(rng, 6, 4)
    x = rng.normal(size=(5, 6))
    out = node_head(Tensor(x), params).data
    np.testing.assert_allclose(out, mlp_oracle(x, params), atol=1e-12)
    assert out.shape == (5, 4)


def test_edge_head_matches_flat_oracle():
    rng = np.random.default_rng(1)
    params = init_head(rng, 6, 3)
    x_e = rng.normal(size=(4, 4, 6))
    out = edge_head(Tensor(x_e), params).data
    assert out.shape == (4, 4, 3)
    oracle = mlp_oracle(x_e.reshape(16, 6), params).reshape(4, 4, 3)
    np.testing.assert_allclose(out, oracle, atol=1e-12)


def test_head_gradients():
    rng = np.random.default_rng(2)
    params = init_head(rng, 4, 3)
    for p in params.parameters():
        if p.data.ndim == 1:  # move relu kinks off exact zero
            p.data += rng.normal(scale=0.1, size=p.data.shape)
    x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    labels = np.array([0, 2, 1])

    def f(*inputs):
        return joint_loss(node_head(x, params), None, labels)

    assert grad_check(f, [x] + params.parameters()) < 1e-4


# -- joint objective ---------------------------------------------------------


def test_uniform_node_logits_give_log_num_classes():
    logits = Tensor(np.zeros((5, 4)))
    loss = joint_loss(logits, None, np.array([0, 1, 2, 3, 0]))
    assert float(loss.data) == pytest.approx(np.log(4.0), abs=1e-12)


def test_uniform_joint_loss_adds_both_terms():
    m = 3
    node_logits = Tensor(np.zeros((m, 4)))
    pred_logits = Tensor(np.zeros((m, m, 3)))
    labels = np.array([0, 1, 2])
    edge_labels = -np.ones((m, m), dtype=np.int64)
    edge_labels[0, 1] = 1
    edge_labels[1, 2] = 0
    loss = joint_loss(node_logits, pred_logits, labels, edge_labels)
    assert float(loss.data) == pytest.approx(
        np.log(4.0) + np.log(3.0), abs=1e-12
    )


def test_joint_loss_is_additive():
    rng = np.random.default_rng(3)
    m = 4
    node_logits = Tensor(rng.normal(size=(m, 5)))
    pred_logits = Tensor(rng.normal(size=(m, m, 3)))
    labels = rng.integers(0, 5, size=m)
    edge_labels = rng.integers(0, 3, size=(m, m))
    np.fill_diagonal(edge_labels, -1)

    total = float(joint_loss(node_logits, pred_logits,
                             labels, edge_labels).data)
    node_only = float(joint_loss(node_logits, None, labels).data)
    # Independent edge-term oracle.
    flat = pred_logits.data.reshape(-1, 3)
    flat_labels = edge_labels.reshape(-1)
    keep = flat_labels >= 0
    z = flat[keep] - flat[keep].max(axis=1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    edge_term = -log_probs[np.arange(keep.sum()), flat_labels[keep]].mean()
    assert abs(total - (node_only + edge_term)) <= 1e-12


def test_single_instance_scene_warns_and_drops_edge_term():
    node_logits = Tensor(np.zeros((1, 4)))
    pred_logits = Tensor(np.zeros((1, 1, 3)))
    with pytest.warns(UserWarning, match="single-instance"):
        loss = joint_loss(node_logits, pred_logits, np.array([2]),
                          -np.ones((1, 1), dtype=np.int64))
    assert float(loss.data) == pytest.approx(np.log(4.0), abs=1e-12)


def test_predicate_logits_without_labels_rejected():
    with pytest.raises(ValueError):
        joint_loss(Tensor(np.zeros((3, 4))), Tensor(np.zeros((3, 3, 2))),
                   np.array([0, 1, 2]))


def test_mis_shaped_edge_labels_rejected():
    with pytest.raises(ShapeError):
        joint_loss(Tensor(np.zeros((3, 4))), Tensor(np.zeros((3, 3, 2))),
                   np.array([0, 1, 2]), np.zeros((2, 2), dtype=np.int64))


def test_joint_loss_gradients():
    rng = np.random.default_rng(4)
    m = 3
    node_logits = Tensor(rng.normal(size=(m, 4)), requires_grad=True)
    pred_logits = Tensor(rng.normal(size=(m, m, 3)), requires_grad=True)
    labels = np.array([1, 0, 3])
    edge_labels = rng.integers(0, 3, size=(m, m))
    np.fill_diagonal(edge_labels, -1)

    def f(a, b):
        return joint_loss(a, b, labels, edge_labels)

    assert grad_check(f, [node_logits, pred_logits]) < 1e-6


# -- triplet assembly --------------------------------------------------------


def test_triplet_confidence_is_product_of_three():
    object_probs = np.array([[0.9, 0.1], [0.2, 0.8]])
    # pair (0, 1) favors predicate 1; reverse pair favors background
    predicate_probs = np.zeros((2, 2, 2))
    predicate_probs[0, 1] = [0.5, 0.5]  # argmax tie goes to background
    predicate_probs[1, 0] = [0.9, 0.1]
    predicate_probs[0, 1] = [0.4, 0.6]
    ranked = triplet_confidences(object_probs, predicate_probs)
    assert len(ranked) == 1
    t = ranked[0]
    assert (t.subject, t.predicate, t.object) == (0, 1, 1)
    assert (t.subject_class, t.object_class) == (0, 1)
    assert t.confidence == pytest.approx(0.9 * 0.6 * 0.8, abs=1e-15)


def test_background_argmax_pairs_are_dropped():
    object_probs = np.full((3, 2), 0.5)
    predicate_probs = np.zeros((3, 3, 4))
    predicate_probs[..., 0] = 0.7  # background wins everywhere
    predicate_probs[..., 1:] = 0.1
    assert triplet_confidences(object_probs, predicate_probs) == []


def test_candidate_count_bound():
    rng = np.random.default_rng(5)
    object_probs = rng.dirichlet(np.ones(4), size=3)
    predicate_probs = rng.dirichlet(np.ones(3), size=(3, 3))
    ranked = triplet_confidences(object_probs, predicate_probs)
    # 6 ordered pairs, at most 2 non-background predicates each
    assert len(ranked) <= 12
    confidences = [t.confidence for t in ranked]
    assert confidences == sorted(confidences, reverse=True)


def test_ranking_matches_brute_force_oracle():
    rng = np.random.default_rng(6)
    for _ in range(20):
        m = int(rng.integers(2, 5))
        object_probs = rng.dirichlet(np.ones(5), size=m)
        predicate_probs = rng.dirichlet(np.ones(4), size=(m, m))

        expected = []
        top = object_probs.argmax(axis=1)
        for i in range(m):
            for j in range(m):
                if i == j or predicate_probs[i, j].argmax() == 0:
                    continue
                for p in (1, 2, 3):
                    conf = (object_probs[i, top[i]]
                            * predicate_probs[i, j, p]
                            * object_probs[j, top[j]])
                    expected.append(
                        (i, p, j, int(top[i]), int(top[j]), float(conf))
                    )
        expected.sort(key=lambda t: (-t[5], t[0], t[2], t[1]))

        got = triplet_confidences(object_probs, predicate_probs)
        assert [tuple(t) for t in got] == expected


def test_tied_confidences_rank_deterministically():
    object_probs = np.array([[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]])
    predicate_probs = np.zeros((3, 3, 2))
    predicate_probs[..., 1] = 1.0  # every pair: predicate 1, conf 1.0
    ranked = triplet_confidences(object_probs, predicate_probs)
    pairs = [(t.subject, t.object) for t in ranked]
    assert pairs == [(0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1)]


def test_triplet_namedtuple_fields():
    t = Triplet(0, 1, 2, 3, 4, 0.5)
    assert t.subject == 0 and t.predicate == 1 and t.object == 2
    assert t.subject_class == 3 and t.object_class == 4
