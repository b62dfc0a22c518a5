"""Pipeline stage 2: the edge-oriented graph convolution core.

Two evolution streams transform a scene-graph state in one pass:

* the node stream is a two-layer graph convolution over the normalized
  adjacency, whose inner activation can be gated channel-wise by the
  *edge attention*, a per-node signal distilled from aggregated outgoing
  and incoming edge features;
* the edge stream is a two-layer MLP applied to every ordered pair,
  whose inner activation can be gated by the *pair attention*, computed
  for each ordered pair from the (already evolved) source and target
  node features.

With both gates disabled the streams decouple into a plain GCN next to a
plain per-edge MLP, which is the vanilla baseline the tests compare
against. A sparse variant (:class:`NodeNetwork`) serves conventional
node-classification and molecular tasks, where materializing all m^2
edge slots is impossible and edge features are synthesized on existing
edges only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .optim import glorot, zeros
from .tensor import Tensor

AGGREGATION_MODES = ("mean", "sum", "max")


@dataclass
class SGState:
    """Scene-graph state: node features (m, C_node) and ordered-pair edge
    features (m, m, C_edge)."""

    x_v: Tensor
    x_e: Tensor

    @property
    def num_instances(self) -> int:
        return self.x_v.shape[0]


@dataclass
class AttentionMasks:
    """Attention tensors from one forward pass, for introspection.

    A disabled gate is ``None``, meaning an implicit all-ones mask;
    :meth:`edge_values` / :meth:`pair_values` materialize that
    convention for tests and logging.
    """

    edge: Tensor | None
    pair: Tensor | None
    edge_shape: tuple
    pair_shape: tuple

    def edge_values(self) -> np.ndarray:
        return np.ones(self.edge_shape) if self.edge is None else self.edge.data

    def pair_values(self) -> np.ndarray:
        return np.ones(self.pair_shape) if self.pair is None else self.pair.data


@dataclass
class EdgeGCNParams:
    """Parameters and wiring flags of one reasoning block.

    Channel convention: the node stream squeezes C_node to C_node/2 and
    expands back; the edge stream does the same with C_edge. Gate paths
    (``w_edge_att``, ``w_pair_proj``, ``w_pair_gate``) are bias-free
    pure matrix maps; stream layers carry conventional biases.
    """

    w_node1: Tensor
    b_node1: Tensor
    w_node2: Tensor
    b_node2: Tensor
    w_edge1: Tensor
    b_edge1: Tensor
    w_edge2: Tensor
    b_edge2: Tensor
    w_edge_att: Tensor | None
    w_pair_proj: Tensor | None
    w_pair_gate: Tensor | None
    use_edge_attention: bool
    use_node_attention: bool
    row_agg: str = "mean"
    col_agg: str = "mean"
    include_diagonal: bool = True

    def parameters(self) -> list:
        named = [
            self.w_node1, self.b_node1, self.w_node2, self.b_node2,
            self.w_edge1, self.b_edge1, self.w_edge2, self.b_edge2,
            self.w_edge_att, self.w_pair_proj, self.w_pair_gate,
        ]
        return [p for p in named if p is not None]


def init_edgegcn_params(rng: np.random.Generator, c_node: int, c_edge: int,
                        use_edge_attention: bool, use_node_attention: bool,
                        row_agg: str = "mean", col_agg: str = "mean",
                        include_diagonal: bool = True) -> EdgeGCNParams:
    for mode in (row_agg, col_agg):
        if mode not in AGGREGATION_MODES:
            raise ValueError(f"unknown aggregation mode {mode!r}")
    c_node_inner = c_node // 2
    c_edge_inner = c_edge // 2
    return EdgeGCNParams(
        w_node1=glorot(rng, c_node, c_node_inner),
        b_node1=zeros(c_node_inner),
        w_node2=glorot(rng, c_node_inner, c_node),
        b_node2=zeros(c_node),
        w_edge1=glorot(rng, c_edge, c_edge_inner),
        b_edge1=zeros(c_edge_inner),
        w_edge2=glorot(rng, c_edge_inner, c_edge),
        b_edge2=zeros(c_edge),
        w_edge_att=(glorot(rng, c_edge, c_node_inner)
                    if use_edge_attention else None),
        w_pair_proj=(glorot(rng, c_node, c_edge_inner)
                     if use_node_attention else None),
        w_pair_gate=(glorot(rng, 2 * c_edge_inner, c_edge_inner)
                     if use_node_attention else None),
        use_edge_attention=use_edge_attention,
        use_node_attention=use_node_attention,
        row_agg=row_agg,
        col_agg=col_agg,
        include_diagonal=include_diagonal,
    )


def _apply_lastdim(x: Tensor, weight: Tensor) -> Tensor:
    """Matrix map over the last axis of an (m, m, C) tensor."""
    m1, m2, c = x.shape
    flat = T.matmul(x.reshape((m1 * m2, c)), weight)
    return flat.reshape((m1, m2, weight.shape[1]))


def edge_attention_dense(x_e: Tensor, weight: Tensor,
                         row_agg: str = "mean", col_agg: str = "mean",
                         include_diagonal: bool = True) -> Tensor:
    """Per-node gate from a dense (m, m, C_edge) pair tensor.

    Node i's outgoing aggregate pools the projected rows (i, k) and its
    incoming aggregate pools (k, i); the gate is the sigmoid of their
    product. The diagonal participates by default (configurable).
    """
    m = x_e.shape[0]
    projected = _apply_lastdim(x_e, weight).reshape((m * m, weight.shape[1]))
    source_ids = np.repeat(np.arange(m), m)
    target_ids = np.tile(np.arange(m), m)
    if not include_diagonal:
        keep = source_ids != target_ids
        projected = T.gather_rows(projected, np.flatnonzero(keep))
        source_ids, target_ids = source_ids[keep], target_ids[keep]
    outgoing = T.segment_reduce(projected, source_ids, m, row_agg)
    incoming = T.segment_reduce(projected, target_ids, m, col_agg)
    return T.sigmoid(outgoing * incoming)


def edge_attention_sparse(x: Tensor, edges: np.ndarray, weight: Tensor,
                          num_nodes: int, row_agg: str = "mean",
                          col_agg: str = "mean") -> Tensor:
    """Per-node gate over existing edges only, for large sparse graphs.

    Edge features are never materialized: the projected feature of edge
    (s, t), namely [x_s (+) (x_t - x_s)] W, splits algebraically into
    x_s U + (x_t - x_s) V with W = [U; V], so only two N x C' products
    and gathers are needed. Nodes with no outgoing (incoming) edges get
    a zero aggregate, hence a 0.5 gate.
    """
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    c = x.shape[1]
    if weight.shape[0] != 2 * c:
        raise T.ShapeError(
            f"attention weight expects {2 * c} input channels, "
            f"got {weight.shape[0]}"
        )
    upper = T.gather_rows(weight, np.arange(c))
    lower = T.gather_rows(weight, np.arange(c, 2 * c))
    x_u = T.matmul(x, upper)
    x_v = T.matmul(x, lower)
    if len(edges) == 0:
        zero = Tensor(np.zeros((num_nodes, weight.shape[1])))
        return T.sigmoid(zero * zero)
    src, dst = edges[:, 0], edges[:, 1]
    per_edge = (T.gather_rows(x_u, src) + T.gather_rows(x_v, dst)
                - T.gather_rows(x_v, src))
    outgoing = T.segment_reduce(per_edge, src, num_nodes, row_agg)
    incoming = T.segment_reduce(per_edge, dst, num_nodes, col_agg)
    return T.sigmoid(outgoing * incoming)


def _propagate(a_hat, x: Tensor) -> Tensor:
    """One adjacency propagation; dense ndarray or scipy sparse."""
    if isinstance(a_hat, np.ndarray):
        return T.matmul(Tensor(a_hat), x)
    return T.spmm(a_hat, x)


def node_evolution(a_hat, x_v: Tensor, gate: Tensor | None,
                   params: EdgeGCNParams) -> Tensor:
    """Two-layer graph convolution with an optional inner gate:
    relu(A (relu(A x W1 + b1) . gate) W2 + b2)."""
    inner = T.relu(T.matmul(_propagate(a_hat, x_v), params.w_node1)
                   + params.b_node1)
    if gate is not None:
        inner = inner * gate
    return T.relu(T.matmul(_propagate(a_hat, inner), params.w_node2)
                  + params.b_node2)


def node_pair_attention(x_v: Tensor, proj: Tensor, gate_weight: Tensor) -> Tensor:
    """Per-ordered-pair gate from node features: for pair (i, j),
    sigmoid(W_g relu(x_i P (+) x_j P)). Directional by construction,
    since source and target occupy fixed concat halves."""
    projected = T.matmul(x_v, proj)
    source = T.expand_pair_source(projected)
    target = T.expand_pair_target(projected)
    hidden = T.relu(T.concat_last(source, target))
    return T.sigmoid(_apply_lastdim(hidden, gate_weight))


def edge_evolution(x_e: Tensor, gate: Tensor | None,
                   params: EdgeGCNParams) -> Tensor:
    """Two-layer MLP on every pair slot with an optional inner gate:
    relu(W2 (relu(W1 x + b1) . gate) + b2)."""
    inner = T.relu(_apply_lastdim(x_e, params.w_edge1) + params.b_edge1)
    if gate is not None:
        inner = inner * gate
    return T.relu(_apply_lastdim(inner, params.w_edge2) + params.b_edge2)


def edgegcn_forward(state: SGState, a_hat, params: EdgeGCNParams,
                    residual: bool = True):
    """One full reasoning pass; returns (state', masks).

    Order of information flow: the edge gate (if enabled) is computed
    from the incoming edge features and modulates the node stream; the
    pair gate (if enabled) is computed from the *evolved* node features
    and modulates the edge stream. Residual connections add the input
    state to both outputs; the scene pipeline uses them, conventional
    graph tasks do not.
    """
    m = state.num_instances
    edge_gate = None
    if params.use_edge_attention:
        edge_gate = edge_attention_dense(
            state.x_e, params.w_edge_att, params.row_agg, params.col_agg,
            params.include_diagonal,
        )
    x_v_out = node_evolution(a_hat, state.x_v, edge_gate, params)

    pair_gate = None
    if params.use_node_attention:
        pair_gate = node_pair_attention(
            x_v_out, params.w_pair_proj, params.w_pair_gate
        )
    x_e_out = edge_evolution(state.x_e, pair_gate, params)

    if residual:
        x_v_out = x_v_out + state.x_v
        x_e_out = x_e_out + state.x_e

    masks = AttentionMasks(
        edge=edge_gate,
        pair=pair_gate,
        edge_shape=(m, params.w_node1.shape[1]),
        pair_shape=(m, m, params.w_edge1.shape[1]),
    )
    return SGState(x_v=x_v_out, x_e=x_e_out), masks


# -- node-only variant for conventional graph tasks ------------------------


@dataclass
class NodeNetworkParams:
    """A stack of graph-convolution layers with at most one gated layer.

    ``gate_layer`` indexes the layer whose input activation is gated;
    the gate is synthesized from that same input by default
    (``attention_source="layer_input"``) or from the raw input features
    (``"raw_input"``).
    """

    layers: list
    gate_layer: int | None
    w_gate: Tensor | None
    attention_source: str = "layer_input"
    row_agg: str = "mean"
    col_agg: str = "mean"

    def parameters(self) -> list:
        out = [t for pair in self.layers for t in pair]
        if self.w_gate is not None:
            out.append(self.w_gate)
        return out


def init_node_network(rng: np.random.Generator, channels,
                      gate_layer: int | None = None,
                      attention_source: str = "layer_input",
                      row_agg: str = "mean",
                      col_agg: str = "mean") -> NodeNetworkParams:
    """``channels`` chains layer widths, e.g. (1433, 16, 7) for a
    two-layer network. ``gate_layer`` of 1 gates the second layer."""
    if len(channels) < 2:
        raise ValueError("need at least one layer")
    if attention_source not in ("layer_input", "raw_input"):
        raise ValueError(f"unknown attention source {attention_source!r}")
    layers = [
        (glorot(rng, c_in, c_out), zeros(c_out))
        for c_in, c_out in zip(channels[:-1], channels[1:])
    ]
    w_gate = None
    if gate_layer is not None:
        if not 0 <= gate_layer < len(layers):
            raise ValueError(f"gate_layer {gate_layer} out of range")
        source_width = (channels[0] if attention_source == "raw_input"
                        else channels[gate_layer])
        w_gate = glorot(rng, 2 * source_width, channels[gate_layer])
    return NodeNetworkParams(
        layers=layers, gate_layer=gate_layer, w_gate=w_gate,
        attention_source=attention_source, row_agg=row_agg, col_agg=col_agg,
    )


def node_network_forward(params: NodeNetworkParams, x: Tensor, a_hat,
                         edges: np.ndarray, dropout_rate: float = 0.0,
                         rng: np.random.Generator | None = None,
                         training: bool = False) -> Tensor:
    """Forward through the stack; ReLU between layers, linear last layer.

    Dropout (training only) is applied to each layer input after any
    gating; the gate itself always sees the clean activation.
    """
    num_nodes = x.shape[0]
    raw = x
    h = x
    last = len(params.layers) - 1
    for i, (w, b) in enumerate(params.layers):
        if params.gate_layer == i and params.w_gate is not None:
            source = raw if params.attention_source == "raw_input" else h
            gate = edge_attention_sparse(
                source, edges, params.w_gate, num_nodes,
                params.row_agg, params.col_agg,
            )
            h = h * gate
        if training and dropout_rate > 0.0:
            h = T.dropout(h, dropout_rate, rng)
        h = T.matmul(_propagate(a_hat, h), w) + b
        if i < last:
            h = T.relu(h)
    return h
