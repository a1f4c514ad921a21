"""Forgetting metrics over per-round, per-label accuracy matrices.

Backward transfer averages, over labels, the gap between each label's peak
accuracy before the final round and its final accuracy.  The performance gap
of a round averages, over labels, each label's distance to the best label
that round.  Per-position accuracy re-keys label accuracies by the position
at which the label's clients were processed in the cycle, then takes the
median across repeated runs (whose label orders differ by design).

Reported summary values follow the repeated-experiment protocol: pool the
last five rounds of every run and report the median (plus the standard
deviation of the pooled values).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LAST_ROUNDS = 5


def backward_transfer(acc: np.ndarray, clamp_negative: bool = False) -> float:
    """Mean over labels of max over earlier rounds of (peak - final accuracy).

    A label's term is negative only when its final round is its strict
    maximum; by default such terms are kept as-is (no clamping), matching the
    plain formula.  Pass clamp_negative=True to floor each term at zero.
    """
    acc = np.asarray(acc, dtype=np.float64)
    if acc.ndim != 2 or acc.shape[0] < 2:
        raise ValueError("need a (rounds >= 2, labels) accuracy matrix")
    terms = acc[:-1].max(axis=0) - acc[-1]
    if clamp_negative:
        terms = np.maximum(terms, 0.0)
    return float(terms.mean())


def performance_gap(acc_row: np.ndarray) -> float:
    """Mean over labels of |min(0, A_l - A_k)| maximised over k, i.e. the
    mean distance to the round's best label."""
    row = np.asarray(acc_row, dtype=np.float64)
    gaps = np.empty_like(row)
    for l, a_l in enumerate(row):
        gaps[l] = np.abs(np.minimum(0.0, a_l - row)).max()
    return float(gaps.mean())


def performance_gap_series(acc: np.ndarray) -> np.ndarray:
    acc = np.asarray(acc, dtype=np.float64)
    return np.array([performance_gap(row) for row in acc])


def per_position_accuracy(records) -> np.ndarray:
    """(positions, rounds) matrix of median accuracy by processing position.

    Every record must come from a cyclic run over a dominant-label partition;
    position k of a record maps to the k-th label of that record's own label
    order, so records with different orders line up by position.
    """
    if not records:
        raise ValueError("no records")
    stacks = []
    for rec in records:
        if rec.label_order is None or rec.schedule_kind != "cyclic":
            raise ValueError("per-position accuracy needs cyclic-order records")
        acc = np.asarray(rec.accuracy, dtype=np.float64)
        stacks.append(acc[:, list(rec.label_order)].T)
    shapes = {s.shape for s in stacks}
    if len(shapes) != 1:
        raise ValueError(f"records disagree on shape: {shapes}")
    return np.median(np.stack(stacks), axis=0)


@dataclass(frozen=True)
class MetricReport:
    num_records: int
    rounds: int
    num_labels: int
    backward_transfer_values: tuple[float, ...]
    backward_transfer_median: float
    backward_transfer_std: float
    reported_accuracy: float
    accuracy_std: float
    reported_gap: float
    gap_std: float
    gap_series_median: np.ndarray
    per_position: np.ndarray | None


def report(records) -> MetricReport:
    """Summarise a set of same-config runs (differing only by seed)."""
    if not records:
        raise ValueError("no records")
    shapes = {np.asarray(r.accuracy).shape for r in records}
    if len(shapes) != 1:
        raise ValueError(f"records disagree on rounds/labels: {shapes}")
    rounds, num_labels = shapes.pop()
    if rounds < LAST_ROUNDS:
        raise ValueError(f"need at least {LAST_ROUNDS} rounds, got {rounds}")

    bw = tuple(backward_transfer(np.asarray(r.accuracy)) for r in records)
    gap_series = np.stack([performance_gap_series(np.asarray(r.accuracy)) for r in records])
    global_series = np.stack([np.asarray(r.global_accuracy) for r in records])

    pooled_acc = global_series[:, -LAST_ROUNDS:].ravel()
    pooled_gap = gap_series[:, -LAST_ROUNDS:].ravel()

    cyclic = all(r.label_order is not None and r.schedule_kind == "cyclic" for r in records)
    return MetricReport(
        num_records=len(records),
        rounds=rounds,
        num_labels=num_labels,
        backward_transfer_values=bw,
        backward_transfer_median=float(np.median(bw)),
        backward_transfer_std=float(np.std(bw)),
        reported_accuracy=float(np.median(pooled_acc)),
        accuracy_std=float(np.std(pooled_acc)),
        reported_gap=float(np.median(pooled_gap)),
        gap_std=float(np.std(pooled_gap)),
        gap_series_median=np.median(gap_series, axis=0),
        per_position=per_position_accuracy(records) if cyclic else None,
    )
