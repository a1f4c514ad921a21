"""Per-round server processing order of clients.

Three policies: random (a fresh uniform permutation each round, standing in
for first-come-first-served arrival), cyclic (clients grouped by dominant
label and visited in a fixed label cycle, identical every round), and
cyclic-and-reverse (the cyclic sequence, direction flipped every round, i.e.
every clients-per-label * num_labels processing steps).

The label cycle is a permutation of the label set fixed once per experiment;
within a label block, clients are ordered by ascending id.
"""

from __future__ import annotations

from dataclasses import dataclass
import json

import numpy as np

RANDOM = "random"
CYCLIC = "cyclic"
CYCLIC_REVERSE = "cyclic_reverse"
ORDER_KINDS = (RANDOM, CYCLIC, CYCLIC_REVERSE)


@dataclass(frozen=True)
class OrderPolicy:
    kind: str
    label_order: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.kind not in ORDER_KINDS:
            raise ValueError(f"unknown order kind {self.kind!r}")

    @property
    def is_cyclic(self) -> bool:
        return self.kind in (CYCLIC, CYCLIC_REVERSE)

    def with_label_order(self, label_order) -> "OrderPolicy":
        order = tuple(int(l) for l in label_order)
        if sorted(order) != list(range(len(order))):
            raise ValueError("label_order must be a permutation of the label set")
        return OrderPolicy(self.kind, order)


@dataclass(frozen=True)
class RoundSchedule:
    """Client order for one round; a permutation of all client ids."""

    clients: tuple[int, ...]
    position_of_label: dict[int, int] | None = None

    def to_json(self) -> str:
        return json.dumps(
            {
                "clients": list(self.clients),
                "position_of_label": None
                if self.position_of_label is None
                else {str(k): v for k, v in sorted(self.position_of_label.items())},
            }
        )


def build_schedule(
    policy: OrderPolicy,
    round_index: int,
    dominant_labels: list[int | None],
    rng: np.random.Generator,
) -> RoundSchedule:
    """Order all clients for one round.

    ``dominant_labels[c]`` is client c's dominant label, or None when the
    partition has no dominant-label structure (only the random policy can run
    then).  Cyclic policies require exactly clients/num_labels clients per
    label and produce the same sequence every round; the reversed variant
    flips it on odd rounds.
    """
    n_clients = len(dominant_labels)
    if n_clients < 1:
        raise ValueError("no clients to schedule")
    if policy.kind == RANDOM:
        order = rng.permutation(n_clients)
        return RoundSchedule(tuple(int(c) for c in order))

    if any(d is None for d in dominant_labels):
        raise ValueError("cyclic order requires a dominant label for every client")
    if policy.label_order is None:
        raise ValueError("cyclic order requires a label_order fixed for the experiment")
    labels = policy.label_order
    by_label = {l: [] for l in labels}
    for c, d in enumerate(dominant_labels):
        if d not in by_label:
            raise ValueError(f"client {c} has dominant label {d} outside the label order")
        by_label[d].append(c)
    sizes = {len(v) for v in by_label.values()}
    if len(sizes) != 1:
        raise ValueError(f"cyclic order needs equally many clients per label, got {sizes}")
    sequence = []
    position_of_label = {}
    for pos, l in enumerate(labels):
        position_of_label[l] = pos
        sequence.extend(sorted(by_label[l]))
    if policy.kind == CYCLIC_REVERSE and round_index % 2 == 1:
        sequence = sequence[::-1]
    return RoundSchedule(tuple(sequence), position_of_label)
