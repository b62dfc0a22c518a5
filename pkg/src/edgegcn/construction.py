"""Pipeline stage 1: point backbone, instance pooling, edge initialization.

Points go through a shared per-point MLP, get pooled into one feature row
per instance, and every ordered instance pair receives an initial edge
feature: the source row concatenated with the target-minus-source
difference. The backbone is deliberately plain (a per-point MLP rather
than a full point-cloud network); it sits behind this module's interface
so a richer encoder could be swapped in without touching later stages.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .optim import glorot, zeros
from .tensor import Tensor


@dataclass
class BackboneParams:
    """Weight/bias pairs of the shared per-point MLP."""

    layers: list

    def parameters(self) -> list:
        return [t for pair in self.layers for t in pair]


def init_backbone(rng: np.random.Generator,
                  channels=(9, 64, 128, 256)) -> BackboneParams:
    if len(channels) < 2:
        raise ValueError("backbone needs at least one layer")
    layers = [
        (glorot(rng, c_in, c_out), zeros(c_out))
        for c_in, c_out in zip(channels[:-1], channels[1:])
    ]
    return BackboneParams(layers=layers)


def backbone_forward(points, params: BackboneParams) -> Tensor:
    """Per-point features; ReLU between layers, linear final layer."""
    h = T.as_tensor(points)
    last = len(params.layers) - 1
    for i, (w, b) in enumerate(params.layers):
        h = T.matmul(h, w) + b
        if i < last:
            h = T.relu(h)
    return h


def pool_instances(x_p: Tensor, instance_ids, num_instances: int,
                   mode: str = "max") -> Tensor:
    """Aggregate point features into one row per instance.

    ``instance_ids`` are 1-based. Channel-wise max is the default
    symmetric pooling; mean is available. An instance owning no points
    is an error (it would silently pool to zero otherwise).
    """
    ids = np.asarray(instance_ids, dtype=np.int64)
    if ids.min() < 1 or ids.max() > num_instances:
        raise ValueError(
            f"instance ids must lie in [1, {num_instances}]"
        )
    counts = np.bincount(ids - 1, minlength=num_instances)
    missing = np.flatnonzero(counts == 0)
    if missing.size:
        raise ValueError(f"instance {int(missing[0]) + 1} owns no points")
    if mode not in ("max", "mean"):
        raise ValueError(f"unknown pooling mode {mode!r}")
    return T.segment_reduce(x_p, ids - 1, num_instances, mode)


def init_edge_features(x_v: Tensor) -> Tensor:
    """Ordered-pair features: out[i, j] = x_v[i] (+) (x_v[j] - x_v[i]).

    All m^2 slots are filled, diagonal included; its difference half is
    zero by construction.
    """
    source = T.expand_pair_source(x_v)
    target = T.expand_pair_target(x_v)
    return T.concat_last(source, target - source)
