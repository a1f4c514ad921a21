import numpy as np
import pytest

from sflsim import (
    DatasetSpec,
    ExperimentConfig,
    OptimizerConfig,
    OrderPolicy,
    PartitionSpec,
    SplitSpec,
)


def make_config(
    protocol="sfl",
    labels=3,
    dim=4,
    per_label=60,
    separation=2.0,
    data_seed=0,
    partition=None,
    order="cyclic",
    cut1=1,
    cut2=None,
    hidden=(8,),
    rounds=3,
    seed=0,
    batch_size=64,
    **kw,
):
    if partition is None:
        partition = PartitionSpec(method="dominant_label", dominant_pct=80.0, clients_per_label=1)
    return ExperimentConfig(
        protocol=protocol,
        dataset=DatasetSpec(
            "synthetic",
            num_labels=labels,
            dim=dim,
            per_label=per_label,
            separation=separation,
            seed=data_seed,
        ),
        partition=partition,
        order=OrderPolicy(order),
        split=SplitSpec(cut1, cut2),
        hidden=hidden,
        rounds=rounds,
        optimizer=OptimizerConfig(batch_size=batch_size),
        seed=seed,
        **kw,
    )


@pytest.fixture
def config_factory():
    return make_config


def params_equal(a, b):
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def final_params(record, name="model"):
    return record.final_parts[name].params()
