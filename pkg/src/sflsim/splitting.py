"""Model splitting and parameter averaging.

A :class:`SplitSpec` carves a stack into part-1 (client side), and either a
single part-2 (server side) or, when a second cut is present, a shared part-2a
plus a part-2b tail that can be replicated into heads.  Splitting is purely an
indexing operation: the parts share the parent's layer objects, so
concatenating them reproduces the original stack exactly.

Activation/gradient exchange between the halves is modelled with in-process
packet value objects; there is no wire format on the training path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import LayerStack


@dataclass(frozen=True)
class SplitSpec:
    """Cut positions. cut1 = number of layers in part-1 (the cut layer is the
    last layer of part-1); cut2, when present, ends part-2a the same way."""

    cut1: int
    cut2: int | None = None

    def validate(self, layer_count: int) -> None:
        if not (0 < self.cut1 < layer_count):
            raise ValueError(f"cut1={self.cut1} out of range for {layer_count} layers")
        if self.cut2 is not None and not (self.cut1 < self.cut2 < layer_count):
            raise ValueError(
                f"cut2={self.cut2} must lie strictly between cut1={self.cut1} "
                f"and layer_count={layer_count}"
            )


@dataclass(frozen=True)
class ActivationPacket:
    """Cut-layer activations and their labels, sent client -> server."""

    client_id: int
    activations: np.ndarray
    labels: np.ndarray
    batch_index: int


@dataclass(frozen=True)
class GradientPacket:
    """Cut-layer gradient, sent server -> client; mirrors one ActivationPacket."""

    client_id: int
    gradients: np.ndarray
    batch_index: int


def split(stack: LayerStack, spec: SplitSpec):
    """Split into (part1, part2a, part2b) layer ranges sharing the parent's
    layers. part2b is None when the spec has no second cut."""
    spec.validate(stack.layer_count)
    part1 = stack.subrange(0, spec.cut1)
    if spec.cut2 is None:
        return part1, stack.subrange(spec.cut1, None), None
    return (
        part1,
        stack.subrange(spec.cut1, spec.cut2),
        stack.subrange(spec.cut2, None),
    )


def fedavg(replicas: list[list[np.ndarray]], weights) -> list[np.ndarray]:
    """Elementwise weighted mean of shape-identical parameter sets.

    Weights are normalised to sum 1; summation runs in the given replica
    order, so callers that need reproducible results across permutations
    should pass replicas in a fixed order (the engines sort by client id).
    """
    if not replicas:
        raise ValueError("no replicas to average")
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (len(replicas),):
        raise ValueError(f"weights shape {w.shape} != ({len(replicas)},)")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    total = w.sum()
    if total <= 0:
        raise ValueError("weights must not all be zero")
    w = w / total
    ref = replicas[0]
    for rep in replicas[1:]:
        if len(rep) != len(ref) or any(a.shape != b.shape for a, b in zip(rep, ref)):
            raise ValueError("replica parameter shapes differ")
    # Anchor form sum(w_i p_i) = p_0 + sum(w_i (p_i - p_0)): exact when the
    # replicas coincide (mean of equals must reproduce the input exactly).
    out = [p.copy() for p in ref]
    for wi, rep in zip(w[1:], replicas[1:]):
        for acc, p, p0 in zip(out, rep, ref):
            acc += wi * (p - p0)
    return out
