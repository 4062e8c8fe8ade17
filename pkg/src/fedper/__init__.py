"""Deterministic single-process simulator of federated averaging with
client-local personalization layers."""

from .data import (
    LabeledDataset,
    PartitionSpec,
    load_csv,
    partition_k_class,
    partition_unbalanced,
    save_csv,
    synth_classification,
    synth_shells,
    train_test_split,
)
from .errors import (
    ConfigError,
    ParseError,
    ProtocolError,
    ShapeError,
    SimulationError,
    UsageError,
)
from .experiment import run_experiment, run_sweep, sweep_seed, sweep_variant
from .metrics import ClientMetrics, SweepResult, cross_client_stats, emit, evaluate
from .model import ModelSpec, PartitionedWeights, join, linearize_base, split
from .nn import (
    LayerSpec,
    Sample,
    SgdConfig,
    WeightSet,
    forward,
    init_weights,
    loss_and_grad,
    sgd,
    weights_checksum,
    weights_equal,
)
from .protocol import (
    ClientState,
    FederationResult,
    RoundHistory,
    RunConfig,
    ServerState,
    aggregate,
    client_round,
    fine_tune,
    run_federation,
    server_init,
)

__version__ = "0.1.0"
