"""Configuration-driven experiment runner.

A suite file is JSON: a ``base`` experiment config, optional named
``variants`` holding overrides merged into the base, and a ``seeds`` list
(ten seeds by default).  Parsing is fail-closed: unknown keys anywhere are
errors that name the offending path.  Each (variant, seed) run writes a
fixed set of files named ``{config_hash}_{seed}_*`` so reruns with the same
inputs are byte-identical; files are written atomically (temp file then
rename).
"""

from __future__ import annotations

import glob as globlib
import json
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import metrics, nn
from .data import DatasetSpec, PartitionSpec
from .protocols import (
    ConfigError,
    ExperimentConfig,
    RunRecord,
    _setup,
    config_digest,
    run,
)
from .scheduling import OrderPolicy
from .splitting import SplitSpec

DEFAULT_SEEDS = tuple(range(10))


@dataclass(frozen=True)
class ExperimentSuite:
    name_configs: tuple[tuple[str, ExperimentConfig], ...]
    seeds: tuple[int, ...]

    def runs(self):
        for name, config in self.name_configs:
            for seed in self.seeds:
                yield name, replace(config, seed=seed)


def _check_keys(section: dict, allowed: set, path: str) -> None:
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {', '.join(unknown)}")


def _need(section: dict, key: str, path: str):
    if key not in section:
        raise ConfigError(f"{path}: missing required key {key!r}")
    return section[key]


def parse_experiment(doc: dict, path: str = "config") -> ExperimentConfig:
    """Build an ExperimentConfig from a plain JSON dict, rejecting unknown
    keys with field-level messages."""
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected an object")
    _check_keys(
        doc,
        {
            "protocol",
            "rounds",
            "eval_fraction",
            "hidden",
            "dataset",
            "partition",
            "order",
            "split",
            "optimizer",
            "l2",
            "heads",
            "seed",
        },
        path,
    )
    try:
        dataset = _parse_dataset(_need(doc, "dataset", path), f"{path}.dataset")
        part = _parse_partition(_need(doc, "partition", path), f"{path}.partition")
        order = _parse_order(_need(doc, "order", path), f"{path}.order")
        cut = _parse_split(_need(doc, "split", path), f"{path}.split")
        opt = _parse_optimizer(doc.get("optimizer", {}), f"{path}.optimizer")
        l2_mode, l2_lambda = _parse_l2(doc.get("l2", {}), f"{path}.l2")
        heads, label_to_group = _parse_heads(doc.get("heads"), f"{path}.heads")
        return ExperimentConfig(
            protocol=_need(doc, "protocol", path),
            dataset=dataset,
            partition=part,
            order=order,
            split=cut,
            hidden=tuple(int(h) for h in doc.get("hidden", [32, 16])),
            rounds=int(doc.get("rounds", 100)),
            eval_fraction=float(doc.get("eval_fraction", 0.2)),
            optimizer=opt,
            l2_mode=l2_mode,
            l2_lambda=l2_lambda,
            num_heads=heads,
            label_to_group=label_to_group,
            seed=int(doc.get("seed", 0)),
        )
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _parse_dataset(d: dict, path: str) -> DatasetSpec:
    kind = _need(d, "kind", path)
    if kind == "synthetic":
        _check_keys(d, {"kind", "labels", "dim", "per_label", "separation", "seed"}, path)
        return DatasetSpec(
            kind="synthetic",
            num_labels=int(_need(d, "labels", path)),
            dim=int(_need(d, "dim", path)),
            per_label=int(_need(d, "per_label", path)),
            separation=float(_need(d, "separation", path)),
            seed=int(d.get("seed", 0)),
        )
    if kind == "csv":
        _check_keys(d, {"kind", "path"}, path)
        return DatasetSpec(kind="csv", path=str(_need(d, "path", path)))
    raise ConfigError(f"{path}: unknown dataset kind {kind!r}")


def _parse_partition(d: dict, path: str) -> PartitionSpec:
    method = _need(d, "method", path)
    if method == "iid":
        _check_keys(d, {"method", "clients"}, path)
        return PartitionSpec(method="iid", clients=int(_need(d, "clients", path)))
    if method == "dominant_label":
        _check_keys(d, {"method", "dominant_pct", "clients_per_label"}, path)
        return PartitionSpec(
            method="dominant_label",
            dominant_pct=float(_need(d, "dominant_pct", path)),
            clients_per_label=int(d.get("clients_per_label", 1)),
        )
    if method == "dirichlet":
        _check_keys(d, {"method", "alpha", "clients"}, path)
        return PartitionSpec(
            method="dirichlet",
            alpha=float(_need(d, "alpha", path)),
            clients=int(_need(d, "clients", path)),
        )
    if method == "sharding":
        _check_keys(d, {"method", "dominant_pct", "labels_per_group", "clients"}, path)
        return PartitionSpec(
            method="sharding",
            dominant_pct=float(_need(d, "dominant_pct", path)),
            labels_per_group=int(d.get("labels_per_group", 2)),
            clients=int(_need(d, "clients", path)),
        )
    raise ConfigError(f"{path}: unknown partition method {method!r}")


def _parse_order(d: dict, path: str) -> OrderPolicy:
    _check_keys(d, {"kind"}, path)
    return OrderPolicy(kind=_need(d, "kind", path))


def _parse_split(d: dict, path: str) -> SplitSpec:
    _check_keys(d, {"cut1", "cut2"}, path)
    cut2 = d.get("cut2")
    return SplitSpec(int(_need(d, "cut1", path)), None if cut2 is None else int(cut2))


def _parse_optimizer(d: dict, path: str) -> nn.OptimizerConfig:
    _check_keys(d, {"learning_rate", "decay", "min_lr", "batch_size"}, path)
    defaults = nn.OptimizerConfig()
    return nn.OptimizerConfig(
        learning_rate=float(d.get("learning_rate", defaults.learning_rate)),
        decay=float(d.get("decay", defaults.decay)),
        min_lr=float(d.get("min_lr", defaults.min_lr)),
        batch_size=int(d.get("batch_size", defaults.batch_size)),
    )


def _parse_l2(d: dict, path: str):
    _check_keys(d, {"mode", "lambda"}, path)
    return str(d.get("mode", "none")), float(d.get("lambda", 0.0))


def _parse_heads(d, path: str):
    if d is None:
        return None, None
    _check_keys(d, {"count", "label_to_group"}, path)
    mapping = d.get("label_to_group")
    return (
        int(_need(d, "count", path)),
        None if mapping is None else tuple(int(g) for g in mapping),
    )


def _merge(base, override, path: str):
    if isinstance(base, dict) and isinstance(override, dict):
        out = dict(base)
        for key, value in override.items():
            out[key] = _merge(base.get(key), value, f"{path}.{key}") if key in base else value
        return out
    return override


def parse_suite(doc: dict, path: str = "suite") -> ExperimentSuite:
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected an object")
    _check_keys(doc, {"base", "variants", "seeds"}, path)
    base = _need(doc, "base", path)
    seeds = tuple(int(s) for s in doc.get("seeds", DEFAULT_SEEDS))
    if len(set(seeds)) != len(seeds):
        raise ConfigError(f"{path}.seeds: seeds must be distinct")
    variants = doc.get("variants")
    if variants is None:
        variants = [{"name": "base", "overrides": {}}]
    named = []
    for i, v in enumerate(variants):
        vpath = f"{path}.variants[{i}]"
        _check_keys(v, {"name", "overrides"}, vpath)
        name = str(v.get("name", f"variant{i}"))
        merged = _merge(base, v.get("overrides", {}), vpath)
        named.append((name, parse_experiment(merged, vpath)))
    return ExperimentSuite(tuple(named), seeds)


def load_suite(path) -> ExperimentSuite:
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    return parse_suite(doc, str(path))


def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp_")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(x: float) -> str:
    return repr(float(x))


def write_record(record: RunRecord, out_dir: str, dump_schedules: bool = False) -> list[str]:
    """Write one run's CSV/JSON files; returns the paths written."""
    stem = os.path.join(out_dir, f"{record.config_hash}_{record.seed}")
    written = []

    rows = ["round,label,accuracy"]
    for r in range(record.accuracy.shape[0]):
        for l in range(record.accuracy.shape[1]):
            rows.append(f"{r},{l},{_fmt(record.accuracy[r, l])}")
    _atomic_write(f"{stem}_labels.csv", "\n".join(rows) + "\n")
    written.append(f"{stem}_labels.csv")

    rows = ["round,global_accuracy"]
    for r, v in enumerate(record.global_accuracy):
        rows.append(f"{r},{_fmt(v)}")
    _atomic_write(f"{stem}_global.csv", "\n".join(rows) + "\n")
    written.append(f"{stem}_global.csv")

    meta = {
        "config_hash": record.config_hash,
        "seed": record.seed,
        "protocol": record.protocol,
        "rounds": int(record.accuracy.shape[0]),
        "num_labels": int(record.accuracy.shape[1]),
        "schedule_kind": record.schedule_kind,
        "label_order": None if record.label_order is None else list(record.label_order),
        "position_of_label": None
        if record.position_of_label is None
        else {str(k): v for k, v in sorted(record.position_of_label.items())},
        "group_of": None if record.group_of is None else list(record.group_of),
        "group_objective": record.group_objective,
    }
    _atomic_write(f"{stem}_meta.json", json.dumps(meta, sort_keys=True) + "\n")
    written.append(f"{stem}_meta.json")

    if record.final_parts:
        _atomic_write(f"{stem}_model.json", nn.stacks_to_json(record.final_parts) + "\n")
        written.append(f"{stem}_model.json")

    if record.client_label_counts is not None:
        doc = {
            str(c): [int(v) for v in row] for c, row in enumerate(record.client_label_counts)
        }
        _atomic_write(f"{stem}_partition.json", json.dumps(doc, sort_keys=True) + "\n")
        written.append(f"{stem}_partition.json")

    if dump_schedules:
        doc = [list(s) for s in record.schedules]
        _atomic_write(f"{stem}_schedules.json", json.dumps(doc) + "\n")
        written.append(f"{stem}_schedules.json")
    return written


def write_summary(config_hash: str, records, out_dir: str) -> list[str]:
    """Pool same-config records into a metric summary (JSON + CSVs)."""
    rep = metrics.report(records)
    stem = os.path.join(out_dir, config_hash)
    written = []
    doc = {
        "config_hash": config_hash,
        "num_records": rep.num_records,
        "rounds": rep.rounds,
        "num_labels": rep.num_labels,
        "backward_transfer": {
            "values": list(rep.backward_transfer_values),
            "median": rep.backward_transfer_median,
            "std": rep.backward_transfer_std,
        },
        "reported_accuracy": rep.reported_accuracy,
        "accuracy_std": rep.accuracy_std,
        "reported_gap": rep.reported_gap,
        "gap_std": rep.gap_std,
    }
    _atomic_write(f"{stem}_summary.json", json.dumps(doc, sort_keys=True) + "\n")
    written.append(f"{stem}_summary.json")

    rows = ["round,gap_median"]
    for r, v in enumerate(rep.gap_series_median):
        rows.append(f"{r},{_fmt(v)}")
    _atomic_write(f"{stem}_gap_series.csv", "\n".join(rows) + "\n")
    written.append(f"{stem}_gap_series.csv")

    if rep.per_position is not None:
        rows = ["position,round,accuracy_median"]
        for k in range(rep.per_position.shape[0]):
            for r in range(rep.per_position.shape[1]):
                rows.append(f"{k + 1},{r},{_fmt(rep.per_position[k, r])}")
        _atomic_write(f"{stem}_per_position.csv", "\n".join(rows) + "\n")
        written.append(f"{stem}_per_position.csv")
    return written


def _execute(payload):
    config, out_dir, dump_schedules = payload
    record = run(config)
    paths = write_record(record, out_dir, dump_schedules)
    view = RecordView(
        accuracy=record.accuracy,
        global_accuracy=record.global_accuracy,
        label_order=record.label_order,
        schedule_kind=record.schedule_kind,
        seed=record.seed,
        config_hash=record.config_hash,
    )
    return view, paths


@dataclass(frozen=True)
class RecordView:
    """The slice of a run record the metrics consume; also what the record
    CSV loader reconstructs."""

    accuracy: np.ndarray
    global_accuracy: np.ndarray
    label_order: tuple[int, ...] | None
    schedule_kind: str
    seed: int
    config_hash: str


def run_suite(suite: ExperimentSuite, out_dir, jobs: int = 1, dump_schedules: bool = False):
    """Run every (variant, seed) pair, write records and per-config
    summaries, return the list of written paths."""
    os.makedirs(out_dir, exist_ok=True)
    out_dir = str(out_dir)
    jobs = max(1, int(jobs))

    # Reject bad configs before any training starts: setting up touches the
    # dataset, partition, model and head validation without training.
    for name, config in suite.name_configs:
        try:
            _setup(config, None)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"variant {name!r}: {exc}") from None

    payloads = [(config, out_dir, dump_schedules) for _, config in suite.runs()]
    written = []
    by_hash: dict[str, list[RecordView]] = {}
    if jobs == 1:
        results = map(_execute, payloads)
    else:
        pool = ProcessPoolExecutor(max_workers=jobs)
        results = pool.map(_execute, payloads)
    for view, paths in results:
        written.extend(paths)
        by_hash.setdefault(view.config_hash, []).append(view)
    if jobs > 1:
        pool.shutdown()

    for name, config in suite.name_configs:
        digest = config_digest(config)
        doc = {
            "name": name,
            "config_hash": digest,
            "config": json.loads(
                json.dumps(asdict(config), sort_keys=True, default=_tuple_default)
            ),
        }
        path = os.path.join(out_dir, f"{digest}_config.json")
        _atomic_write(path, json.dumps(doc, sort_keys=True) + "\n")
        written.append(path)
        records = sorted(by_hash[digest], key=lambda v: v.seed)
        written.extend(write_summary(digest, records, out_dir))
    return written


def _tuple_default(value):
    if isinstance(value, tuple):
        return list(value)
    raise TypeError(f"cannot serialise {type(value)}")


def load_records(pattern: str) -> list[RecordView]:
    """Load record views from files matching a glob over ``*_meta.json``."""
    metas = sorted(globlib.glob(pattern))
    if not metas:
        raise FileNotFoundError(f"no record metadata matches {pattern!r}")
    views = []
    for meta_path in metas:
        with open(meta_path) as f:
            meta = json.load(f)
        stem = meta_path[: -len("_meta.json")]
        acc = np.zeros((meta["rounds"], meta["num_labels"]))
        with open(f"{stem}_labels.csv") as f:
            next(f)
            for line in f:
                r, l, v = line.strip().split(",")
                acc[int(r), int(l)] = float(v)
        glob_acc = np.zeros(meta["rounds"])
        with open(f"{stem}_global.csv") as f:
            next(f)
            for line in f:
                r, v = line.strip().split(",")
                glob_acc[int(r)] = float(v)
        views.append(
            RecordView(
                accuracy=acc,
                global_accuracy=glob_acc,
                label_order=None if meta["label_order"] is None else tuple(meta["label_order"]),
                schedule_kind=meta["schedule_kind"],
                seed=meta["seed"],
                config_hash=meta["config_hash"],
            )
        )
    return views


def summarize_records(pattern: str, out_file) -> list[str]:
    """CLI ``metrics`` backend: summarise record files into a JSON summary
    plus sibling CSVs named after the output stem."""
    views = load_records(pattern)
    hashes = {v.config_hash for v in views}
    if len(hashes) != 1:
        raise ConfigError(f"records mix {len(hashes)} configs; pass one config's records")
    out_file = str(out_file)
    stem = out_file[:-5] if out_file.endswith(".json") else out_file
    summary_path = f"{stem}.json"
    rep = metrics.report(views)
    doc = {
        "config_hash": views[0].config_hash,
        "num_records": rep.num_records,
        "rounds": rep.rounds,
        "num_labels": rep.num_labels,
        "backward_transfer": {
            "values": list(rep.backward_transfer_values),
            "median": rep.backward_transfer_median,
            "std": rep.backward_transfer_std,
        },
        "reported_accuracy": rep.reported_accuracy,
        "accuracy_std": rep.accuracy_std,
        "reported_gap": rep.reported_gap,
        "gap_std": rep.gap_std,
    }
    written = []
    _atomic_write(summary_path, json.dumps(doc, sort_keys=True) + "\n")
    written.append(summary_path)
    rows = ["round,gap_median"]
    for r, v in enumerate(rep.gap_series_median):
        rows.append(f"{r},{_fmt(v)}")
    _atomic_write(f"{stem}_gap_series.csv", "\n".join(rows) + "\n")
    written.append(f"{stem}_gap_series.csv")
    if rep.per_position is not None:
        rows = ["position,round,accuracy_median"]
        for k in range(rep.per_position.shape[0]):
            for r in range(rep.per_position.shape[1]):
                rows.append(f"{k + 1},{r},{_fmt(rep.per_position[k, r])}")
        _atomic_write(f"{stem}_per_position.csv", "\n".join(rows) + "\n")
        written.append(f"{stem}_per_position.csv")
    return written
