"""Desk-scale simulator of split federated learning and its forgetting
behaviour: dense training core, model splitting, non-IID partitioners,
server processing orders, a grouped multi-head mitigation, forgetting
metrics, and a deterministic experiment harness."""

from .nn import (
    Dense,
    LayerStack,
    OptimizerConfig,
    Relu,
    SoftmaxCrossEntropy,
    backward,
    concat,
    forward,
    load_checkpoint,
    loss_and_grad,
    mlp,
    save_checkpoint,
    sgd_step,
    state_hash,
)
from .splitting import ActivationPacket, GradientPacket, SplitSpec, fedavg, split
from .data import (
    ClientShard,
    Dataset,
    DatasetSpec,
    PartitionSpec,
    generate_synthetic,
    load_csv,
    mean_label_entropy,
    partition,
    partition_report,
    save_csv,
    stratified_split,
)
from .scheduling import OrderPolicy, RoundSchedule, build_schedule
from .hydra import (
    GroupAssignment,
    HeadBank,
    HydraConfig,
    aggregate_heads,
    assign_groups,
    assignment_report,
    exact_assignment,
    objective_value,
    route,
)
from .protocols import (
    ConfigError,
    ExperimentConfig,
    RunRecord,
    config_digest,
    evaluate,
    evaluate_confidence,
    run,
    run_fl_reference,
    run_multihead_fl,
    run_sfl,
    run_sfl_hydra,
    run_splitfed_v1,
    run_splitfed_v3,
    run_splitnn,
)
from .metrics import (
    MetricReport,
    backward_transfer,
    per_position_accuracy,
    performance_gap,
    performance_gap_series,
    report,
)

__version__ = "0.1.0"
