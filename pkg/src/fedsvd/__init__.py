"""Single-round federated training of one-layer networks via SVD merging."""

__version__ = "0.1.0"

from .data import (
    Dataset,
    PartitionMode,
    PartitionPlan,
    encode_targets,
    load_csv,
    make_blobs,
    partition,
    partition_indices,
    split_train_test,
)
from .errors import (
    ArgumentError,
    DomainError,
    EncodingError,
    FedSvdError,
    FormatError,
    IngestError,
    ProtocolError,
    RemoteError,
    ShapeError,
    TransportError,
)
from .model import (
    AggregateState,
    ClientUpdate,
    ModelWeights,
    add_bias,
    aggregate,
    classify,
    fit_centralized,
    fit_client,
    incorporate,
    predict,
    solve_weights,
)
from .numeric import (
    LOGISTIC,
    ActivationSpec,
    SvdFactors,
    act_derivative_at,
    act_forward,
    act_inverse,
    economy_svd,
    merge_svd,
)
from .simulator import MetricsReport, SimulationConfig, run_experiment, run_round, sweep_clients

__all__ = [
    "__version__",
    "ActivationSpec",
    "AggregateState",
    "ArgumentError",
    "ClientUpdate",
    "Dataset",
    "DomainError",
    "EncodingError",
    "FedSvdError",
    "FormatError",
    "IngestError",
    "LOGISTIC",
    "MetricsReport",
    "ModelWeights",
    "PartitionMode",
    "PartitionPlan",
    "ProtocolError",
    "RemoteError",
    "ShapeError",
    "SimulationConfig",
    "SvdFactors",
    "TransportError",
    "act_derivative_at",
    "act_forward",
    "act_inverse",
    "add_bias",
    "aggregate",
    "classify",
    "economy_svd",
    "encode_targets",
    "fit_centralized",
    "fit_client",
    "incorporate",
    "load_csv",
    "make_blobs",
    "merge_svd",
    "partition",
    "partition_indices",
    "predict",
    "run_experiment",
    "run_round",
    "solve_weights",
    "split_train_test",
    "sweep_clients",
]
