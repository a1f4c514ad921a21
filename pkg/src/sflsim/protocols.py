"""Round engines for the split federated learning protocol variants.

All engines share one skeleton: clients forward their part of the model over
their local batches, the server drives the rest, and parameter replicas are
averaged at round boundaries.  They consume randomness in one canonical
order (holdout split, partition, model init, label order, then per round the
schedule followed by per-client batch permutations in ascending client id),
so two protocols given the same seed see identical data, initial weights and
batch streams.  Several tests rely on that to assert bit-level equalities
between degenerate protocol pairs.

The engines differ only in what is replicated, what is shared, and what gets
averaged:

* sfl: per-client part-1 replicas (averaged each round), one shared part-2
  trained sequentially in schedule order;
* sfl_hydra: like sfl, but part-2 is cut again into a shared part-2a and a
  bank of part-2b heads; each batch trains its client's head and the heads
  are re-merged into one at round end;
* splitfed_v1 (alias fl): per-client replicas of both parts, both averaged
  each round; equivalent to plain FedAvg on the unsplit model;
* splitfed_v3: per-client replicas of both parts but only part-2 is
  averaged; part-1 replicas persist, and inference picks the part-1
  candidate with the most confident output;
* splitnn: a single part-1 relayed from client to client in schedule order,
  no averaging anywhere;
* multihead_fl: every client trains the full model locally with its group's
  output head; bodies average across all clients, heads within their group,
  and inference picks the most confident head;
* fl_reference: FedAvg on the unsplit model, written against the single-range
  training path; serves as the independent twin for splitfed_v1.

Per-batch server ordering follows the split-learning workflow: the gradient
packet returned to the client is computed from the part-2 weights as they
were when the batch arrived, i.e. before the server applies its own update
for that batch.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict

import numpy as np

from . import nn
from .data import Dataset, DatasetSpec, PartitionSpec, partition, stratified_split
from .hydra import (
    HeadBank,
    HydraConfig,
    aggregate_heads,
    assign_groups,
    objective_value,
    route,
)
from .scheduling import OrderPolicy, build_schedule
from .splitting import ActivationPacket, GradientPacket, SplitSpec, fedavg


class ConfigError(ValueError):
    """An experiment configuration that can be rejected before training."""


PROTOCOL_NAMES = (
    "sfl",
    "sfl_hydra",
    "splitfed_v1",
    "fl",
    "splitfed_v3",
    "splitnn",
    "multihead_fl",
    "fl_reference",
)

L2_MODES = ("none", "part2", "full")


@dataclass(frozen=True)
class ExperimentConfig:
    protocol: str
    dataset: DatasetSpec
    partition: PartitionSpec
    order: OrderPolicy
    split: SplitSpec
    hidden: tuple[int, ...] = (32, 16)
    rounds: int = 100
    eval_fraction: float = 0.2
    optimizer: nn.OptimizerConfig = field(default_factory=nn.OptimizerConfig)
    l2_mode: str = "none"
    l2_lambda: float = 0.0
    num_heads: int | None = None
    label_to_group: tuple[int, ...] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.protocol not in PROTOCOL_NAMES:
            raise ConfigError(f"unknown protocol {self.protocol!r}")
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if not (0 < self.eval_fraction < 1):
            raise ConfigError("eval_fraction must lie in (0, 1)")
        if self.l2_mode not in L2_MODES:
            raise ConfigError(f"l2_mode must be one of {L2_MODES}")
        if self.l2_lambda < 0:
            raise ConfigError("l2_lambda must be >= 0")
        if self.protocol in ("sfl_hydra", "multihead_fl"):
            if self.num_heads is None:
                raise ConfigError(f"{self.protocol} requires num_heads")
            if self.split.cut2 is None:
                raise ConfigError(f"{self.protocol} requires split.cut2 (the head boundary)")

    def l2_for(self, part: str) -> float:
        if self.l2_mode == "full":
            return self.l2_lambda
        if self.l2_mode == "part2" and part == "part2":
            return self.l2_lambda
        return 0.0


def config_digest(config: ExperimentConfig) -> str:
    """Hash of every config field except the seed (seed names the run)."""
    doc = asdict(config)
    doc.pop("seed")
    blob = json.dumps(doc, sort_keys=True, default=_json_default)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _json_default(value):
    if isinstance(value, tuple):
        return list(value)
    raise TypeError(f"cannot serialise {type(value)}")


@dataclass
class RunRecord:
    """Everything the metrics and the harness exports need from one run."""

    protocol: str
    seed: int
    config_hash: str
    accuracy: np.ndarray
    global_accuracy: np.ndarray
    label_order: tuple[int, ...] | None
    position_of_label: dict[int, int] | None
    schedule_kind: str
    final_parts: dict[str, nn.LayerStack] = field(default_factory=dict)
    client_label_counts: np.ndarray | None = None
    schedules: tuple[tuple[int, ...], ...] = ()
    group_of: tuple[int, ...] | None = None
    group_objective: float | None = None


def evaluate(stack: nn.LayerStack, eval_x: np.ndarray, eval_y: np.ndarray, num_labels: int):
    """Global and per-label accuracy of a classifier stack on a held-out set."""
    out, _ = nn.forward(stack, eval_x)
    pred = out.argmax(axis=1)
    return _accuracies(pred, eval_y, num_labels)


def evaluate_confidence(
    candidates: list[nn.LayerStack], eval_x: np.ndarray, eval_y: np.ndarray, num_labels: int
):
    """Accuracy when, per sample, the candidate with the most confident
    (highest maximum) class probability makes the prediction."""
    probs = np.stack([nn.forward(c, eval_x)[0] for c in candidates])
    winner = probs.max(axis=2).argmax(axis=0)
    chosen = probs[winner, np.arange(eval_x.shape[0])]
    return _accuracies(chosen.argmax(axis=1), eval_y, num_labels)


def _accuracies(pred: np.ndarray, eval_y: np.ndarray, num_labels: int):
    per_label = np.empty(num_labels)
    for l in range(num_labels):
        mask = eval_y == l
        if not mask.any():
            raise ValueError(f"label {l} absent from the evaluation set")
        per_label[l] = float((pred[mask] == l).mean())
    return float((pred == eval_y).mean()), per_label


@dataclass
class _RunContext:
    rng: np.random.Generator
    config: ExperimentConfig
    stack: nn.LayerStack
    train: Dataset
    eval_x: np.ndarray
    eval_y: np.ndarray
    shards: list
    dominant: list
    policy: OrderPolicy
    label_order: tuple[int, ...] | None
    client_x: list[np.ndarray]
    client_y: list[np.ndarray]
    sizes: list[int]


def _setup(config: ExperimentConfig, dataset: Dataset | None) -> _RunContext:
    if dataset is None:
        dataset = config.dataset.load()
    rng = np.random.default_rng(config.seed)
    train_idx, eval_idx = stratified_split(dataset, config.eval_fraction, rng)
    train = dataset.subset(train_idx)
    shards = partition(train, config.partition, rng)
    stack = nn.mlp(dataset.features.shape[1], config.hidden, dataset.num_labels, rng)
    config.split.validate(stack.layer_count)

    policy = config.order
    label_order = None
    if policy.is_cyclic:
        dominants = [s.dominant_label for s in shards]
        if any(d is None for d in dominants):
            raise ConfigError(
                "cyclic order requires a dominant-label partition (every client "
                "needs a dominant label)"
            )
        counts = np.bincount(dominants, minlength=dataset.num_labels)
        if len(set(counts)) != 1:
            raise ConfigError(
                f"cyclic order needs equally many clients per label, got {counts}"
            )
        label_order = tuple(int(l) for l in rng.permutation(dataset.num_labels))
        policy = policy.with_label_order(label_order)

    if config.num_heads is not None:
        HydraConfig(config.num_heads, config.split.cut2, config.label_to_group).validate(
            dataset.num_labels
        )

    dominant = [s.dominant_label for s in shards]
    return _RunContext(
        rng=rng,
        config=config,
        stack=stack,
        train=train,
        eval_x=dataset.features[eval_idx],
        eval_y=dataset.labels[eval_idx],
        shards=shards,
        dominant=dominant,
        policy=policy,
        label_order=label_order,
        client_x=[train.features[s.indices] for s in shards],
        client_y=[train.labels[s.indices] for s in shards],
        sizes=[s.size for s in shards],
    )


def _draw_batches(ctx: _RunContext):
    """One pass over every client's data, shuffled; drawn in ascending client
    id so the stream does not depend on the processing schedule."""
    batch = ctx.config.optimizer.batch_size
    out = []
    for c in range(len(ctx.shards)):
        perm = ctx.rng.permutation(ctx.sizes[c])
        xs, ys = ctx.client_x[c][perm], ctx.client_y[c][perm]
        out.append(
            [(xs[i : i + batch], ys[i : i + batch]) for i in range(0, ctx.sizes[c], batch)]
        )
    return out


def _logit_end(stack: nn.LayerStack) -> int:
    """Index just past the last layer that feeds the loss (the trailing
    softmax head, when present, is evaluated only at inference)."""
    n = stack.layer_count
    if n and isinstance(stack.layers[-1], nn.SoftmaxCrossEntropy):
        return n - 1
    return n


def _server_step(part2: nn.LayerStack, pkt: ActivationPacket, lr, l2, probe, round_index):
    """Shared part-2 update: forward to the logits, loss, backward, answer the
    client with the cut-layer gradient, then apply the server update."""
    logits, tape = nn.forward(part2, pkt.activations, 0, _logit_end(part2))
    _, dlogits = nn.loss_and_grad(logits, pkt.labels)
    grads, dacts = nn.backward(part2, tape, dlogits)
    reply = GradientPacket(pkt.client_id, dacts, pkt.batch_index)
    if probe is not None:
        before = part2.param_copies()
    part2.set_params(nn.sgd_step(part2.params(), grads, lr, l2))
    if probe is not None:
        probe(
            "batch",
            {
                "round": round_index,
                "client_id": pkt.client_id,
                "batch_index": pkt.batch_index,
                "activation_packet": pkt,
                "gradient_packet": reply,
                "part2_before": before,
                "part2_after": part2.param_copies(),
            },
        )
    return reply


def _client_step(part1: nn.LayerStack, tape, reply: GradientPacket, lr, l2):
    grads, _ = nn.backward(part1, tape, reply.gradients)
    part1.set_params(nn.sgd_step(part1.params(), grads, lr, l2))


def run_sfl(config: ExperimentConfig, dataset: Dataset | None = None, probe=None) -> RunRecord:
    """SplitFedv2: parallel part-1 at the clients, one shared sequential
    part-2 at the server, part-1 averaged at round end."""
    ctx = _setup(config, dataset)
    cut = config.split.cut1
    part2 = ctx.stack.subrange(cut)
    part1_global = ctx.stack.param_copies(0, cut)
    scratch1 = ctx.stack.subrange(0, cut).copy()

    def one_round(round_index, schedule, batches):
        lr = config.optimizer.lr_at(round_index)
        replicas = {}
        for c in schedule.clients:
            scratch1.set_params([p.copy() for p in part1_global])
            for b, (x, y) in enumerate(batches[c]):
                acts, tape1 = nn.forward(scratch1, x)
                reply = _server_step(
                    part2,
                    ActivationPacket(c, acts, y, b),
                    lr,
                    config.l2_for("part2"),
                    probe,
                    round_index,
                )
                _client_step(scratch1, tape1, reply, lr, config.l2_for("part1"))
            replicas[c] = scratch1.param_copies()
        merged = fedavg(
            [replicas[c] for c in sorted(replicas)],
            [ctx.sizes[c] for c in sorted(replicas)],
        )
        part1_global[:] = merged
        ctx.stack.set_params([p.copy() for p in merged], 0, cut)
        return {"model": ctx.stack}

    return _drive(ctx, one_round)


def run_sfl_hydra(config: ExperimentConfig, dataset: Dataset | None = None, probe=None) -> RunRecord:
    """SplitFedv2 with a grouped head bank: part-2a stays shared and is
    carried across rounds; part-2b is replicated per client group, trained by
    routed batches, and merged back into a single head at round end."""
    ctx = _setup(config, dataset)
    cut1, cut2 = config.split.cut1, config.split.cut2
    part2a = ctx.stack.subrange(cut1, cut2)
    bank = HeadBank(ctx.stack.subrange(cut2).copy(), config.num_heads)
    assignment = assign_groups(
        ctx.shards, config.num_heads, ctx.label_order, config.label_to_group
    )
    part1_global = ctx.stack.param_copies(0, cut1)
    scratch1 = ctx.stack.subrange(0, cut1).copy()

    def one_round(round_index, schedule, batches):
        lr = config.optimizer.lr_at(round_index)
        l2_p2 = config.l2_for("part2")
        replicas = {}
        for c in schedule.clients:
            scratch1.set_params([p.copy() for p in part1_global])
            for b, (x, y) in enumerate(batches[c]):
                acts, tape1 = nn.forward(scratch1, x)
                pkt = ActivationPacket(c, acts, y, b)
                head = bank.heads[route(pkt, assignment, bank)]
                mid, tape2a = nn.forward(part2a, pkt.activations)
                logits, tape2b = nn.forward(head, mid, 0, _logit_end(head))
                _, dlogits = nn.loss_and_grad(logits, pkt.labels)
                g2b, dmid = nn.backward(head, tape2b, dlogits)
                g2a, dacts = nn.backward(part2a, tape2a, dmid)
                reply = GradientPacket(c, dacts, b)
                if probe is not None:
                    before = part2a.param_copies() + head.param_copies()
                part2a.set_params(nn.sgd_step(part2a.params(), g2a, lr, l2_p2))
                head.set_params(nn.sgd_step(head.params(), g2b, lr, l2_p2))
                if probe is not None:
                    probe(
                        "batch",
                        {
                            "round": round_index,
                            "client_id": c,
                            "batch_index": b,
                            "activation_packet": pkt,
                            "gradient_packet": reply,
                            "part2_before": before,
                            "part2_after": part2a.param_copies() + head.param_copies(),
                        },
                    )
                _client_step(scratch1, tape1, reply, lr, config.l2_for("part1"))
            replicas[c] = scratch1.param_copies()
        merged_head = aggregate_heads(bank)
        merged_p1 = fedavg(
            [replicas[c] for c in sorted(replicas)],
            [ctx.sizes[c] for c in sorted(replicas)],
        )
        part1_global[:] = merged_p1
        ctx.stack.set_params([p.copy() for p in merged_p1], 0, cut1)
        ctx.stack.set_params([p.copy() for p in merged_head], cut2, None)
        return {"model": ctx.stack}

    record = _drive(ctx, one_round)
    record.group_of = assignment.group_of
    record.group_objective = objective_value(assignment, ctx.shards)
    return record


def run_splitfed_v1(config: ExperimentConfig, dataset: Dataset | None = None, probe=None) -> RunRecord:
    """Per-client replicas of both parts, both averaged at round end; the cut
    placement has no effect on the trajectory."""
    ctx = _setup(config, dataset)
    cut = config.split.cut1
    scratch = ctx.stack.copy()

    def one_round(round_index, schedule, batches):
        lr = config.optimizer.lr_at(round_index)
        p1_replicas, p2_replicas = {}, {}
        for c in schedule.clients:
            scratch.set_params(ctx.stack.param_copies())
            for x, y in batches[c]:
                acts, tape1 = nn.forward(scratch, x, 0, cut)
                logits, tape2 = nn.forward(scratch, acts, cut, _logit_end(scratch))
                _, dlogits = nn.loss_and_grad(logits, y)
                g2, dacts = nn.backward(scratch, tape2, dlogits)
                g1, _ = nn.backward(scratch, tape1, dacts)
                scratch.set_params(
                    nn.sgd_step(scratch.params(cut), g2, lr, config.l2_for("part2")), cut
                )
                scratch.set_params(
                    nn.sgd_step(scratch.params(0, cut), g1, lr, config.l2_for("part1")), 0, cut
                )
            p1_replicas[c] = scratch.param_copies(0, cut)
            p2_replicas[c] = scratch.param_copies(cut)
        ids = sorted(p1_replicas)
        weights = [ctx.sizes[c] for c in ids]
        ctx.stack.set_params(fedavg([p1_replicas[c] for c in ids], weights), 0, cut)
        ctx.stack.set_params(fedavg([p2_replicas[c] for c in ids], weights), cut)
        return {"model": ctx.stack}

    return _drive(ctx, one_round)


def run_fl_reference(config: ExperimentConfig, dataset: Dataset | None = None, probe=None) -> RunRecord:
    """Plain FedAvg over the unsplit model; single-range training path."""
    ctx = _setup(config, dataset)
    cut = config.split.cut1
    scratch = ctx.stack.copy()

    def one_round(round_index, schedule, batches):
        lr = config.optimizer.lr_at(round_index)
        replicas = {}
        for c in schedule.clients:
            scratch.set_params(ctx.stack.param_copies())
            for x, y in batches[c]:
                logits, tape = nn.forward(scratch, x, 0, _logit_end(scratch))
                _, dlogits = nn.loss_and_grad(logits, y)
                grads, _ = nn.backward(scratch, tape, dlogits)
                if config.l2_mode == "part2":
                    n1 = len(scratch.params(0, cut))
                    new1 = nn.sgd_step(scratch.params(0, cut), grads[:n1], lr, 0.0)
                    new2 = nn.sgd_step(scratch.params(cut), grads[n1:], lr, config.l2_lambda)
                    scratch.set_params(new1 + new2)
                else:
                    scratch.set_params(
                        nn.sgd_step(scratch.params(), grads, lr, config.l2_for("part1"))
                    )
            replicas[c] = scratch.param_copies()
        ids = sorted(replicas)
        ctx.stack.set_params(fedavg([replicas[c] for c in ids], [ctx.sizes[c] for c in ids]))
        return {"model": ctx.stack}

    return _drive(ctx, one_round)


def run_splitfed_v3(config: ExperimentConfig, dataset: Dataset | None = None, probe=None) -> RunRecord:
    """Per-client replicas of both parts; only part-2 is averaged, part-1
    replicas persist per client.  Inference runs every part-1 candidate and
    keeps the most confident prediction."""
    ctx = _setup(config, dataset)
    cut = config.split.cut1
    part2 = ctx.stack.subrange(cut)
    part1s = [ctx.stack.subrange(0, cut).copy() for _ in ctx.shards]
    scratch2 = part2.copy()

    def one_round(round_index, schedule, batches):
        lr = config.optimizer.lr_at(round_index)
        p2_replicas = {}
        for c in schedule.clients:
            scratch2.set_params(part2.param_copies())
            for x, y in batches[c]:
                acts, tape1 = nn.forward(part1s[c], x)
                logits, tape2 = nn.forward(scratch2, acts, 0, _logit_end(scratch2))
                _, dlogits = nn.loss_and_grad(logits, y)
                g2, dacts = nn.backward(scratch2, tape2, dlogits)
                g1, _ = nn.backward(part1s[c], tape1, dacts)
                scratch2.set_params(nn.sgd_step(scratch2.params(), g2, lr, config.l2_for("part2")))
                part1s[c].set_params(
                    nn.sgd_step(part1s[c].params(), g1, lr, config.l2_for("part1"))
                )
            p2_replicas[c] = scratch2.param_copies()
        ids = sorted(p2_replicas)
        part2.set_params(fedavg([p2_replicas[c] for c in ids], [ctx.sizes[c] for c in ids]))
        parts = {f"part1_client{c}": part1s[c] for c in range(len(part1s))}
        parts["part2"] = part2
        return parts

    def eval_fn():
        candidates = [nn.concat(p1, part2) for p1 in part1s]
        return evaluate_confidence(candidates, ctx.eval_x, ctx.eval_y, ctx.train.num_labels)

    return _drive(ctx, one_round, eval_fn)


def run_splitnn(config: ExperimentConfig, dataset: Dataset | None = None, probe=None) -> RunRecord:
    """Sequential split learning relay: one part-1 handed from client to
    client in schedule order, one part-2 at the server, no averaging."""
    ctx = _setup(config, dataset)
    cut = config.split.cut1
    part1 = ctx.stack.subrange(0, cut)
    part2 = ctx.stack.subrange(cut)

    def one_round(round_index, schedule, batches):
        lr = config.optimizer.lr_at(round_index)
        for c in schedule.clients:
            if probe is not None:
                probe(
                    "client_start",
                    {
                        "round": round_index,
                        "client_id": c,
                        "part1_hash": nn.state_hash(part1.params()),
                    },
                )
            for b, (x, y) in enumerate(batches[c]):
                acts, tape1 = nn.forward(part1, x)
                reply = _server_step(
                    part2, ActivationPacket(c, acts, y, b), lr, config.l2_for("part2"), None, round_index
                )
                _client_step(part1, tape1, reply, lr, config.l2_for("part1"))
        return {"model": ctx.stack}

    return _drive(ctx, one_round)


def run_multihead_fl(config: ExperimentConfig, dataset: Dataset | None = None, probe=None) -> RunRecord:
    """Multi-head FedAvg: clients train the full model with their group's
    head; bodies average over everyone, heads within their group.  Inference
    picks the most confident head."""
    ctx = _setup(config, dataset)
    cut1, cut2 = config.split.cut1, config.split.cut2
    assignment = assign_groups(
        ctx.shards, config.num_heads, ctx.label_order, config.label_to_group
    )
    body_global = ctx.stack.param_copies(0, cut2)
    head_template = ctx.stack.subrange(cut2)
    heads_global = [head_template.param_copies() for _ in range(config.num_heads)]
    scratch = ctx.stack.copy()

    def one_round(round_index, schedule, batches):
        lr = config.optimizer.lr_at(round_index)
        bodies, heads = {}, {}
        for c in schedule.clients:
            g = assignment.group_of[c]
            scratch.set_params([p.copy() for p in body_global], 0, cut2)
            scratch.set_params([p.copy() for p in heads_global[g]], cut2)
            for x, y in batches[c]:
                acts, tape1 = nn.forward(scratch, x, 0, cut1)
                mid, tape2a = nn.forward(scratch, acts, cut1, cut2)
                logits, tape2b = nn.forward(scratch, mid, cut2, _logit_end(scratch))
                _, dlogits = nn.loss_and_grad(logits, y)
                g2b, dmid = nn.backward(scratch, tape2b, dlogits)
                g2a, dacts = nn.backward(scratch, tape2a, dmid)
                g1, _ = nn.backward(scratch, tape1, dacts)
                l2_p2 = config.l2_for("part2")
                scratch.set_params(nn.sgd_step(scratch.params(cut2), g2b, lr, l2_p2), cut2)
                scratch.set_params(
                    nn.sgd_step(scratch.params(cut1, cut2), g2a, lr, l2_p2), cut1, cut2
                )
                scratch.set_params(
                    nn.sgd_step(scratch.params(0, cut1), g1, lr, config.l2_for("part1")), 0, cut1
                )
            bodies[c] = scratch.param_copies(0, cut2)
            heads[c] = scratch.param_copies(cut2)
            if probe is not None:
                probe(
                    "client_done",
                    {"round": round_index, "client_id": c, "group": g, "head": heads[c]},
                )
        ids = sorted(bodies)
        body_global[:] = fedavg([bodies[c] for c in ids], [ctx.sizes[c] for c in ids])
        for g in range(config.num_heads):
            members = [c for c in ids if assignment.group_of[c] == g]
            if members:
                heads_global[g] = fedavg(
                    [heads[c] for c in members], [ctx.sizes[c] for c in members]
                )
        ctx.stack.set_params([p.copy() for p in body_global], 0, cut2)
        parts = {"body": ctx.stack.subrange(0, cut2)}
        for g in range(config.num_heads):
            stack = head_template.copy()
            stack.set_params([p.copy() for p in heads_global[g]])
            parts[f"head{g}"] = stack
        return parts

    def eval_fn():
        body = ctx.stack.subrange(0, cut2)
        candidates = []
        for g in range(config.num_heads):
            head = head_template.copy()
            head.set_params([p.copy() for p in heads_global[g]])
            candidates.append(nn.concat(body, head))
        return evaluate_confidence(candidates, ctx.eval_x, ctx.eval_y, ctx.train.num_labels)

    record = _drive(ctx, one_round, eval_fn)
    record.group_of = assignment.group_of
    record.group_objective = objective_value(assignment, ctx.shards)
    return record


def _drive(ctx: _RunContext, one_round, eval_fn=None) -> RunRecord:
    """Run the round loop and collect the accuracy record."""
    config = ctx.config
    num_labels = ctx.train.num_labels
    acc = np.zeros((config.rounds, num_labels))
    global_acc = np.zeros(config.rounds)
    position_of_label = None
    schedules = []
    parts = {"model": ctx.stack}
    for r in range(config.rounds):
        schedule = build_schedule(ctx.policy, r, ctx.dominant, ctx.rng)
        schedules.append(schedule.clients)
        if position_of_label is None:
            position_of_label = schedule.position_of_label
        batches = _draw_batches(ctx)
        parts = one_round(r, schedule, batches)
        if eval_fn is not None:
            global_acc[r], acc[r] = eval_fn()
        else:
            global_acc[r], acc[r] = evaluate(ctx.stack, ctx.eval_x, ctx.eval_y, num_labels)
    return RunRecord(
        protocol=config.protocol,
        seed=config.seed,
        config_hash=config_digest(config),
        accuracy=acc,
        global_accuracy=global_acc,
        label_order=ctx.label_order,
        position_of_label=position_of_label,
        schedule_kind=config.order.kind,
        final_parts={name: stack.copy() for name, stack in parts.items()},
        client_label_counts=np.stack([s.label_counts for s in ctx.shards]),
        schedules=tuple(schedules),
    )


ENGINES = {
    "sfl": run_sfl,
    "sfl_hydra": run_sfl_hydra,
    "splitfed_v1": run_splitfed_v1,
    "fl": run_splitfed_v1,
    "splitfed_v3": run_splitfed_v3,
    "splitnn": run_splitnn,
    "multihead_fl": run_multihead_fl,
    "fl_reference": run_fl_reference,
}


def run(config: ExperimentConfig, dataset: Dataset | None = None, probe=None) -> RunRecord:
    return ENGINES[config.protocol](config, dataset, probe)
