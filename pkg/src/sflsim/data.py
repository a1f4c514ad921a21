"""Datasets and client partitioning.

Sources: a synthetic Gaussian-blob classification generator and CSV files
(``f1,...,fk,label`` per row).  Partitioners produce disjoint per-client
shards covering the dataset, each carrying its per-label sample histogram.

Three label-skew partitioners are provided besides IID:

* dominant-label: each client holds a fixed share of one label's samples,
  with ``clients_per_label`` clients per label and the remainder of every
  label spread evenly over all clients not dominant in it;
* dirichlet: per-label proportions across clients drawn from a symmetric
  Dirichlet, lower concentration meaning more skew;
* sharding: the label space is covered by overlapping groups of
  ``labels_per_group`` dominant labels, each group holding an equal share of
  each of its labels.

All splits are exact and deterministic for a given seed: percentage shares
are realised as integer sample counts, with remainders dealt round-robin over
ascending client ids so that conservation holds to the sample.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_labels: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ValueError("features must be 2-D")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("labels length must match feature rows")
        if self.labels.size == 0:
            raise ValueError("empty dataset")
        if self.labels.min() < 0 or self.labels.max() >= self.num_labels:
            raise ValueError(f"labels must lie in [0, {self.num_labels})")
        counts = np.bincount(self.labels, minlength=self.num_labels)
        if np.any(counts == 0):
            missing = int(np.flatnonzero(counts == 0)[0])
            raise ValueError(f"label {missing} has no samples")

    def __len__(self) -> int:
        return self.features.shape[0]

    def label_histogram(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_labels)

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.num_labels)


@dataclass
class ClientShard:
    """One client's sample indices into a parent dataset, plus the per-label
    histogram of those samples."""

    client_id: int
    indices: np.ndarray
    label_counts: np.ndarray
    dominant_label: int | None = None

    @property
    def size(self) -> int:
        return int(self.indices.size)


def make_shard(client_id, indices, dataset, dominant_label=None) -> ClientShard:
    idx = np.asarray(sorted(indices), dtype=np.int64)
    counts = np.bincount(dataset.labels[idx], minlength=dataset.num_labels)
    return ClientShard(client_id, idx, counts, dominant_label)


def generate_synthetic(
    num_labels: int,
    dim: int,
    per_label: int,
    separation: float,
    seed,
) -> Dataset:
    """Balanced mixture of unit-variance Gaussian clusters.

    Cluster means sit at ``separation`` along distinct coordinate axes when
    dim >= num_labels, otherwise along random unit directions.
    """
    if num_labels < 2 or dim < 2 or per_label < 1:
        raise ValueError("need num_labels >= 2, dim >= 2, per_label >= 1")
    rng = np.random.default_rng(seed)
    if num_labels <= dim:
        means = np.eye(num_labels, dim) * separation
    else:
        dirs = rng.normal(size=(num_labels, dim))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        means = dirs * separation
    features = np.empty((num_labels * per_label, dim))
    labels = np.empty(num_labels * per_label, dtype=np.int64)
    for l in range(num_labels):
        block = slice(l * per_label, (l + 1) * per_label)
        features[block] = means[l] + rng.normal(size=(per_label, dim))
        labels[block] = l
    order = rng.permutation(len(labels))
    return Dataset(features[order], labels[order], num_labels)


def load_csv(path) -> Dataset:
    """Read ``feature...,label`` rows; the label count is max label + 1."""
    rows = []
    labels = []
    width = None
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            if len(cells) < 2:
                raise ValueError(f"{path}: row {lineno}: need features and a label column")
            if width is None:
                width = len(cells)
            elif len(cells) != width:
                raise ValueError(
                    f"{path}: row {lineno}: expected {width} columns, got {len(cells)}"
                )
            try:
                rows.append([float(c) for c in cells[:-1]])
                label = int(cells[-1])
            except ValueError as exc:
                raise ValueError(f"{path}: row {lineno}: {exc}") from None
            if label < 0:
                raise ValueError(f"{path}: row {lineno}: negative label")
            labels.append(label)
    if not rows:
        raise ValueError(f"{path}: empty dataset file")
    return Dataset(np.asarray(rows), np.asarray(labels), max(labels) + 1)


def save_csv(dataset: Dataset, path) -> None:
    with open(path, "w") as f:
        for x, y in zip(dataset.features, dataset.labels):
            f.write(",".join(repr(float(v)) for v in x) + f",{int(y)}\n")


@dataclass(frozen=True)
class DatasetSpec:
    """Where a run's data comes from: a seeded synthetic mixture or a CSV.

    The synthetic seed is part of the spec (not the run seed) so that seed
    sweeps vary training randomness over a fixed dataset.
    """

    kind: str
    num_labels: int = 0
    dim: int = 0
    per_label: int = 0
    separation: float = 0.0
    seed: int = 0
    path: str | None = None

    def __post_init__(self):
        if self.kind not in ("synthetic", "csv"):
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        if self.kind == "csv" and not self.path:
            raise ValueError("csv dataset needs a path")

    def load(self) -> "Dataset":
        if self.kind == "synthetic":
            return generate_synthetic(
                self.num_labels, self.dim, self.per_label, self.separation, self.seed
            )
        return load_csv(self.path)


@dataclass(frozen=True)
class PartitionSpec:
    """Which partitioner to run and with what parameters.

    method: "iid" | "dominant_label" | "dirichlet" | "sharding".
    dominant_pct is the percent share p of a label kept by the clients
    dominant in it; clients_per_label only applies to dominant_label, where
    the client count is clients_per_label * num_labels.
    """

    method: str
    clients: int = 0
    dominant_pct: float = 0.0
    clients_per_label: int = 1
    alpha: float = 0.0
    labels_per_group: int = 2

    def __post_init__(self):
        if self.method not in ("iid", "dominant_label", "dirichlet", "sharding"):
            raise ValueError(f"unknown partition method {self.method!r}")
        if self.method in ("iid", "dirichlet", "sharding") and self.clients < 1:
            raise ValueError("clients must be >= 1")
        if self.method == "dominant_label" and self.clients_per_label < 1:
            raise ValueError("clients_per_label must be >= 1")
        if self.method in ("dominant_label", "sharding") and not (
            0 <= self.dominant_pct <= 100
        ):
            raise ValueError("dominant_pct must lie in [0, 100]")
        if self.method == "dirichlet" and self.alpha <= 0:
            raise ValueError("alpha must be > 0")
        if self.method == "sharding" and self.labels_per_group < 2:
            raise ValueError("labels_per_group must be >= 2")

    def client_count(self, num_labels: int) -> int:
        if self.method == "dominant_label":
            return self.clients_per_label * num_labels
        return self.clients


def _deal(count: int, receivers: list[int], start: int = 0) -> dict[int, int]:
    """Split ``count`` items as evenly as possible over receivers, surplus
    going round-robin from ``start`` in the given order."""
    base, extra = divmod(count, len(receivers))
    out = {r: base for r in receivers}
    for k in range(extra):
        out[receivers[(start + k) % len(receivers)]] += 1
    return out


def partition(dataset: Dataset, spec: PartitionSpec, seed) -> list[ClientShard]:
    """Split a dataset into disjoint per-client shards covering it."""
    rng = np.random.default_rng(seed)
    n_clients = spec.client_count(dataset.num_labels)
    if len(dataset) < n_clients:
        raise ValueError(f"dataset of {len(dataset)} samples cannot feed {n_clients} clients")
    if spec.method == "iid":
        shards = _partition_iid(dataset, n_clients, rng)
    elif spec.method == "dominant_label":
        shards = _partition_dominant(dataset, spec, rng)
    elif spec.method == "dirichlet":
        shards = _partition_dirichlet(dataset, spec, rng)
    else:
        shards = _partition_sharding(dataset, spec, rng)
    for shard in shards:
        if shard.size == 0:
            raise ValueError(f"client {shard.client_id} received no samples")
    return shards


def _partition_iid(dataset, n_clients, rng) -> list[ClientShard]:
    order = rng.permutation(len(dataset))
    pieces = np.array_split(order, n_clients)
    return [make_shard(c, piece, dataset) for c, piece in enumerate(pieces)]


def _label_pools(dataset, rng) -> list[np.ndarray]:
    pools = []
    for l in range(dataset.num_labels):
        idx = np.flatnonzero(dataset.labels == l)
        pools.append(idx[rng.permutation(idx.size)])
    return pools


def _partition_dominant(dataset, spec, rng) -> list[ClientShard]:
    num_labels = dataset.num_labels
    phi = spec.clients_per_label
    n_clients = phi * num_labels
    pools = _label_pools(dataset, rng)
    given: list[list[np.ndarray]] = [[] for _ in range(n_clients)]
    for l in range(num_labels):
        pool = pools[l]
        dominant = list(range(l * phi, (l + 1) * phi))
        others = [c for c in range(n_clients) if c not in dominant]
        take = int(round(pool.size * spec.dominant_pct / 100.0))
        counts = _deal(take, dominant)
        rest = _deal(pool.size - take, others, start=l) if pool.size > take else {}
        pos = 0
        for c in dominant + others:
            k = counts.get(c, 0) + rest.get(c, 0)
            given[c].append(pool[pos : pos + k])
            pos += k
    return [
        make_shard(c, np.concatenate(parts), dataset, dominant_label=c // phi)
        for c, parts in enumerate(given)
    ]


def _partition_dirichlet(dataset, spec, rng) -> list[ClientShard]:
    n_clients = spec.clients
    for _ in range(100):
        pools = _label_pools(dataset, rng)
        given: list[list[np.ndarray]] = [[] for _ in range(n_clients)]
        for pool in pools:
            props = rng.dirichlet(np.full(n_clients, spec.alpha))
            counts = _largest_remainder(props * pool.size, pool.size)
            pos = 0
            for c, k in enumerate(counts):
                given[c].append(pool[pos : pos + k])
                pos += k
        sizes = [sum(p.size for p in parts) for parts in given]
        if min(sizes) > 0:
            return [make_shard(c, np.concatenate(parts), dataset) for c, parts in enumerate(given)]
    raise ValueError("dirichlet partition left a client empty after 100 draws")


def _largest_remainder(real_counts: np.ndarray, total: int) -> np.ndarray:
    base = np.floor(real_counts).astype(np.int64)
    short = total - base.sum()
    remainders = real_counts - base
    # Ties resolved toward lower client id via stable sort on -remainder.
    order = np.argsort(-remainders, kind="stable")
    base[order[:short]] += 1
    return base


def _partition_sharding(dataset, spec, rng) -> list[ClientShard]:
    num_labels = dataset.num_labels
    n_groups = num_labels
    n = spec.labels_per_group
    if n >= num_labels:
        raise ValueError("labels_per_group must be < num_labels")
    if spec.clients % n_groups:
        raise ValueError(f"clients={spec.clients} must be a multiple of {n_groups} groups")
    per_group = spec.clients // n_groups
    group_labels = [{(g + j) % num_labels for j in range(n)} for g in range(n_groups)]
    pools = _label_pools(dataset, rng)
    group_take: list[list[np.ndarray]] = [[] for _ in range(n_groups)]
    for l in range(num_labels):
        pool = pools[l]
        holders = [g for g in range(n_groups) if l in group_labels[g]]
        others = [g for g in range(n_groups) if l not in group_labels[g]]
        share = int(round(pool.size * spec.dominant_pct / (100.0 * n)))
        pos = 0
        for g in holders:
            group_take[g].append(pool[pos : pos + share])
            pos += share
        rest = _deal(pool.size - pos, others, start=l)
        for g in others:
            k = rest[g]
            group_take[g].append(pool[pos : pos + k])
            pos += k
    shards = []
    for g in range(n_groups):
        mine = np.concatenate(group_take[g])
        counts = _deal(mine.size, list(range(per_group)))
        pos = 0
        for j in range(per_group):
            k = counts[j]
            shards.append(
                make_shard(g * per_group + j, mine[pos : pos + k], dataset, dominant_label=g)
            )
            pos += k
    return shards


def mean_label_entropy(shards: list[ClientShard]) -> float:
    """Mean over clients of the entropy (nats) of the shard label mix."""
    total = 0.0
    for shard in shards:
        p = shard.label_counts / shard.label_counts.sum()
        nz = p[p > 0]
        total += float(-(nz * np.log(nz)).sum())
    return total / len(shards)


def partition_report(shards: list[ClientShard]) -> str:
    """JSON map client_id -> per-label sample counts (the histogram each
    client reports before training)."""
    return json.dumps(
        {str(s.client_id): [int(v) for v in s.label_counts] for s in shards},
        sort_keys=True,
    )


def stratified_split(dataset: Dataset, holdout_fraction: float, rng):
    """Split indices into (train, holdout) with per-label proportions kept."""
    if not (0 < holdout_fraction < 1):
        raise ValueError("holdout_fraction must lie in (0, 1)")
    train, hold = [], []
    for l in range(dataset.num_labels):
        idx = np.flatnonzero(dataset.labels == l)
        idx = idx[rng.permutation(idx.size)]
        k = int(round(idx.size * holdout_fraction))
        if k == 0 or k == idx.size:
            raise ValueError(f"label {l} cannot be split with fraction {holdout_fraction}")
        hold.append(idx[:k])
        train.append(idx[k:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(hold))
