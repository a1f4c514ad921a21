"""Server-side machinery for the multi-head (hydra) variant.

Before training starts, clients are assigned to head groups from their label
histograms: iterating over the groups round-robin, each group greedily takes
the unassigned client with the most samples of the group's associated label.
Group-major iteration keeps the group sizes balanced within one.  An
exhaustive oracle for the underlying max-min objective is provided for small
instances, along with the bank of head replicas used during a round: batches
are routed to their client's head, and at round end the heads are averaged
(weighted by routed sample counts) back into a single head.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass

import numpy as np

from .data import ClientShard
from .splitting import ActivationPacket, fedavg
from .nn import LayerStack


@dataclass(frozen=True)
class HydraConfig:
    """Head count and second cut; num_heads defaults to the label count.

    For fewer heads than labels, ``label_to_group`` maps every label to a
    head (superclass grouping) and histograms are collapsed accordingly.
    """

    num_heads: int
    cut2: int
    label_to_group: tuple[int, ...] | None = None

    def validate(self, num_labels: int) -> None:
        if not (1 <= self.num_heads <= num_labels):
            raise ValueError(f"num_heads must lie in [1, {num_labels}]")
        if 1 < self.num_heads < num_labels:
            # A single head needs no map (all labels collapse into it).
            if self.label_to_group is None:
                raise ValueError("num_heads < num_labels requires a label_to_group map")
        if self.label_to_group is not None:
            m = self.label_to_group
            if len(m) != num_labels:
                raise ValueError("label_to_group must map every label")
            if set(m) != set(range(self.num_heads)):
                raise ValueError("label_to_group must be onto the group set")


@dataclass(frozen=True)
class GroupAssignment:
    """Client -> group map plus the labels associated with each group."""

    group_of: tuple[int, ...]
    num_groups: int
    label_sets: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if any(not (0 <= g < self.num_groups) for g in self.group_of):
            raise ValueError("group index out of range")

    @property
    def matrix(self) -> np.ndarray:
        u = np.zeros((len(self.group_of), self.num_groups), dtype=np.int64)
        u[np.arange(len(self.group_of)), self.group_of] = 1
        return u

    def members(self, g: int) -> list[int]:
        return [c for c, gc in enumerate(self.group_of) if gc == g]


def group_label_sets(
    num_labels: int,
    num_groups: int,
    label_order=None,
    label_to_group=None,
) -> tuple[tuple[int, ...], ...]:
    """Labels associated with each group.

    With one group per label, group g owns the g-th label of the cycle order
    (identity order when none is given).  With fewer groups, the explicit
    label_to_group map defines the superclasses.
    """
    if num_groups == num_labels and label_to_group is None:
        order = tuple(range(num_labels)) if label_order is None else tuple(label_order)
        if sorted(order) != list(range(num_labels)):
            raise ValueError("label_order must be a permutation of the label set")
        return tuple((l,) for l in order)
    if label_to_group is None:
        if num_groups == 1:
            return (tuple(range(num_labels)),)
        raise ValueError("fewer groups than labels requires label_to_group")
    sets = [[] for _ in range(num_groups)]
    for l, g in enumerate(label_to_group):
        sets[g].append(l)
    if any(not s for s in sets):
        raise ValueError("every group needs at least one label")
    return tuple(tuple(s) for s in sets)


def _score_matrix(shards: list[ClientShard], label_sets) -> np.ndarray:
    """S[c, g] = number of client c's samples whose label belongs to group g."""
    scores = np.zeros((len(shards), len(label_sets)), dtype=np.float64)
    for c, shard in enumerate(shards):
        for g, labels in enumerate(label_sets):
            scores[c, g] = shard.label_counts[list(labels)].sum()
    return scores


def assign_groups(
    shards: list[ClientShard],
    num_groups: int,
    label_order=None,
    label_to_group=None,
) -> GroupAssignment:
    """Greedy group-major assignment of clients to head groups.

    Cycling over groups, each group takes the unassigned client with the
    highest count of the group's labels (lowest client id on ties), until no
    client remains.  Group sizes therefore differ by at most one.
    """
    n_clients = len(shards)
    if num_groups < 1:
        raise ValueError("need at least one group")
    if n_clients < num_groups:
        raise ValueError(f"{n_clients} clients cannot fill {num_groups} groups")
    num_labels = shards[0].label_counts.size
    label_sets = group_label_sets(num_labels, num_groups, label_order, label_to_group)
    scores = _score_matrix(shards, label_sets)
    # Each group's candidates sorted best-first once (stable, so ties fall to
    # the lowest client id); picking then just advances a pointer past
    # already-assigned clients.
    order = np.argsort(-scores, axis=0, kind="stable").T.tolist()
    pointer = [0] * num_groups
    assigned = [False] * n_clients
    group_of = [0] * n_clients
    remaining = n_clients
    for g in itertools.cycle(range(num_groups)):
        if remaining == 0:
            break
        col = order[g]
        k = pointer[g]
        while assigned[col[k]]:
            k += 1
        pick = col[k]
        pointer[g] = k + 1
        group_of[pick] = g
        assigned[pick] = True
        remaining -= 1
    return GroupAssignment(tuple(group_of), num_groups, label_sets)


def objective_value(assignment: GroupAssignment, shards: list[ClientShard]) -> float:
    """Worst group's mean per-client count of its own labels (max-min target)."""
    scores = _score_matrix(shards, assignment.label_sets)
    worst = np.inf
    for g in range(assignment.num_groups):
        members = assignment.members(g)
        if not members:
            raise ValueError(f"group {g} is empty")
        worst = min(worst, scores[members, g].mean())
    return float(worst)


EXACT_SEARCH_CAP = 100_000


def exact_assignment(
    shards: list[ClientShard],
    num_groups: int,
    label_order=None,
    label_to_group=None,
) -> GroupAssignment:
    """Exhaustive maximiser of the max-min objective; small instances only.

    Enumerates every assignment with each client in exactly one group and no
    group empty.  Ties prefer the assignment whose one-hot matrix compares
    smallest in row-major order.  Balance is not enforced, so the optimum can
    be arbitrarily lopsided.
    """
    n_clients = len(shards)
    if num_groups**n_clients > EXACT_SEARCH_CAP:
        raise ValueError(
            f"instance too large: {num_groups}^{n_clients} exceeds {EXACT_SEARCH_CAP}"
        )
    if n_clients < num_groups:
        raise ValueError(f"{n_clients} clients cannot fill {num_groups} groups")
    num_labels = shards[0].label_counts.size
    label_sets = group_label_sets(num_labels, num_groups, label_order, label_to_group)
    scores = _score_matrix(shards, label_sets)
    best = None
    best_value = -np.inf
    for combo in itertools.product(range(num_groups), repeat=n_clients):
        sums = np.zeros(num_groups)
        counts = np.zeros(num_groups)
        for c, g in enumerate(combo):
            sums[g] += scores[c, g]
            counts[g] += 1
        if np.any(counts == 0):
            continue
        value = float((sums / counts).min())
        # A one-hot row with the 1 further right compares smaller, so the
        # lexicographically smallest matrix has the largest group tuple.
        if value > best_value or (value == best_value and combo > best):
            best, best_value = combo, value
    return GroupAssignment(best, num_groups, label_sets)


class HeadBank:
    """Replicas of the part-2b layers, one per group, with per-round routed
    sample counters."""

    def __init__(self, template: LayerStack, num_heads: int):
        self.heads = [template.copy() for _ in range(num_heads)]
        self.counts = np.zeros(num_heads, dtype=np.int64)

    @property
    def num_heads(self) -> int:
        return len(self.heads)

    def reset_from(self, params: list[np.ndarray]) -> None:
        for head in self.heads:
            head.set_params([p.copy() for p in params])
        self.counts[:] = 0


def route(packet: ActivationPacket, assignment: GroupAssignment, bank: HeadBank) -> int:
    """Head index for a batch; bumps that head's routed-sample counter.

    The same mapping is used for the matching gradient on the way back.
    """
    if not (0 <= packet.client_id < len(assignment.group_of)):
        raise ValueError(f"unknown client {packet.client_id}")
    head = assignment.group_of[packet.client_id]
    bank.counts[head] += packet.activations.shape[0]
    return head


def aggregate_heads(bank: HeadBank) -> list[np.ndarray]:
    """Average the heads (weighted by routed samples), reseed every replica
    with the aggregate for the next round, and zero the counters."""
    if bank.counts.sum() == 0:
        raise ValueError("no samples were routed to any head this round")
    used = [h for h, n in enumerate(bank.counts) if n > 0]
    merged = fedavg(
        [bank.heads[h].param_copies() for h in used],
        [float(bank.counts[h]) for h in used],
    )
    bank.reset_from(merged)
    return merged


def assignment_report(
    assignment: GroupAssignment,
    shards: list[ClientShard],
    exact: GroupAssignment | None = None,
) -> str:
    """JSON export: client -> group, objective value, and the gap to the
    exhaustive optimum when it was computed."""
    doc = {
        "group_of": {str(c): int(g) for c, g in enumerate(assignment.group_of)},
        "label_sets": [list(s) for s in assignment.label_sets],
        "objective": objective_value(assignment, shards),
    }
    if exact is not None:
        doc["exact_objective"] = objective_value(exact, shards)
        doc["gap"] = doc["exact_objective"] - doc["objective"]
    return json.dumps(doc, sort_keys=True)
