"""In-process federation: partition, fit every client, aggregate, solve, measure.

Timing follows the usual accounting for simulated federations run on one
machine: every client span is measured separately, the round's training
time is the slowest client plus the coordinator, the CPU-time total is the
sum of all spans, and energy is that total times a single device wattage.
"""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .data import (
    Dataset,
    PartitionMode,
    PartitionPlan,
    encode_targets,
    partition,
    split_train_test,
)
from .errors import ArgumentError
from .model import (
    AggregateState,
    ClientUpdate,
    ModelWeights,
    add_bias,
    classify,
    fit_client,
    incorporate,
    solve_weights,
)
from .numeric import LOGISTIC, ActivationSpec

log = logging.getLogger(__name__)

WORKERS_ENV = "FEDSVD_WORKERS"


def default_workers() -> int:
    try:
        return max(1, int(os.environ[WORKERS_ENV]))
    except (KeyError, ValueError):
        return os.cpu_count() or 1


@dataclass(frozen=True)
class SimulationConfig:
    num_clients: int = 1
    partition_mode: PartitionMode = PartitionMode.IID_SHUFFLE
    lam: float = 1e-3
    seed: int = 0
    repeats: int = 3
    device_watts: float = 65.0
    train_fraction: float = 0.70
    parallel_clients: bool = False
    max_workers: int | None = None
    activation: ActivationSpec = LOGISTIC
    target_low: float = 0.05
    target_high: float = 0.95

    def __post_init__(self):
        object.__setattr__(self, "partition_mode", PartitionMode(self.partition_mode))
        if self.num_clients < 1:
            raise ArgumentError(f"num_clients must be >= 1, got {self.num_clients}")
        if self.repeats < 1:
            raise ArgumentError(f"repeats must be >= 1, got {self.repeats}")
        if not (self.lam >= 0 and np.isfinite(self.lam)):
            raise ArgumentError(f"lambda must be finite and >= 0, got {self.lam}")
        if not self.device_watts > 0:
            raise ArgumentError(f"device_watts must be > 0, got {self.device_watts}")


# Plain left-to-right sum/max so anyone re-deriving these from a report gets the same bits.


def training_time(per_client_seconds, coordinator_seconds: float) -> float:
    """Slowest client plus coordinator: clients run in parallel on their own devices."""
    return max(float(t) for t in per_client_seconds) + coordinator_seconds


def sum_cpu_time(per_client_seconds, coordinator_seconds: float) -> float:
    return sum(float(t) for t in per_client_seconds) + coordinator_seconds


def watt_hours(device_watts: float, cpu_seconds: float) -> float:
    return device_watts * cpu_seconds / 3600.0


@dataclass(frozen=True, eq=False)
class RoundTiming:
    per_client_seconds: np.ndarray
    coordinator_seconds: float

    @property
    def training_time_seconds(self) -> float:
        return training_time(self.per_client_seconds, self.coordinator_seconds)

    @property
    def sum_cpu_seconds(self) -> float:
        return sum_cpu_time(self.per_client_seconds, self.coordinator_seconds)


@dataclass
class RepeatRecord:
    seed: int
    per_client_seconds: list[float]
    coordinator_seconds: float
    training_time_seconds: float
    sum_cpu_seconds: float
    watt_hours: float
    accuracy_test: float
    accuracy_train: float


@dataclass
class MetricsReport:
    """Mean metrics over repeats, plus the raw per-repeat records.

    The three derived figures are recomputed from the mean per-client and
    coordinator times, so the defining identities hold exactly on the report
    itself as well as on every raw record.
    """

    num_clients: int
    partition_mode: str
    lam: float
    device_watts: float
    per_client_seconds: list[float]
    coordinator_seconds: float
    training_time_seconds: float
    sum_cpu_seconds: float
    watt_hours: float
    accuracy_test: float
    accuracy_train: float
    repeats_aggregated: int
    repeats: list[RepeatRecord] = field(default_factory=list)
    weights: ModelWeights | None = field(default=None, repr=False)

    @classmethod
    def from_timings(
        cls,
        per_client_seconds: Sequence[float],
        coordinator_seconds: float,
        device_watts: float,
        *,
        num_clients: int | None = None,
        partition_mode: str = PartitionMode.IID_SHUFFLE.value,
        lam: float = 1e-3,
        accuracy_test: float = float("nan"),
        accuracy_train: float = float("nan"),
        repeats: list[RepeatRecord] | None = None,
    ) -> "MetricsReport":
        per_client = [float(t) for t in per_client_seconds]
        cpu = sum_cpu_time(per_client, coordinator_seconds)
        return cls(
            num_clients=len(per_client) if num_clients is None else num_clients,
            partition_mode=partition_mode,
            lam=lam,
            device_watts=device_watts,
            per_client_seconds=per_client,
            coordinator_seconds=coordinator_seconds,
            training_time_seconds=training_time(per_client, coordinator_seconds),
            sum_cpu_seconds=cpu,
            watt_hours=watt_hours(device_watts, cpu),
            accuracy_test=accuracy_test,
            accuracy_train=accuracy_train,
            repeats_aggregated=len(repeats) if repeats else 1,
            repeats=list(repeats or []),
        )

    def to_dict(self) -> dict:
        out = asdict(self)
        out.pop("weights")
        return out


def _timed_client(shard: Dataset, class_list, cfg: SimulationConfig) -> tuple[ClientUpdate, float]:
    t0 = time.perf_counter()
    x = add_bias(shard.features)
    d = encode_targets(shard.labels, class_list, cfg.target_low, cfg.target_high)
    update = fit_client(x, d, cfg.activation)
    return update, time.perf_counter() - t0


def run_round(train: Dataset, plan: PartitionPlan, cfg: SimulationConfig) -> tuple[ModelWeights, RoundTiming]:
    """One federated round: partition, client fits, sequential fold, solve."""
    shards = partition(train, plan)
    classes = train.class_list

    if cfg.parallel_clients and len(shards) > 1:
        workers = cfg.max_workers or default_workers()
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda s: _timed_client(s, classes, cfg), shards))
    else:
        results = [_timed_client(s, classes, cfg) for s in shards]

    t0 = time.perf_counter()
    state = AggregateState()
    for update, _ in results:
        state = incorporate(state, update)
    weights = solve_weights(state, cfg.lam, cfg.activation)
    coordinator = time.perf_counter() - t0

    per_client = np.array([t for _, t in results])
    return weights, RoundTiming(per_client, coordinator)


def accuracy(ds: Dataset, weights: ModelWeights) -> float:
    return float(np.mean(classify(ds.features, weights, ds.class_list) == ds.labels))


def run_experiment(ds: Dataset, cfg: SimulationConfig) -> MetricsReport:
    """Split, run ``cfg.repeats`` rounds with seeds ``seed, seed+1, ...`` and average."""
    records: list[RepeatRecord] = []
    first_weights = None
    for r in range(cfg.repeats):
        seed = cfg.seed + r
        train, test = split_train_test(ds, cfg.train_fraction, seed)
        plan = PartitionPlan(cfg.partition_mode, cfg.num_clients, seed)
        weights, timing = run_round(train, plan, cfg)
        if first_weights is None:
            first_weights = weights
        cpu = timing.sum_cpu_seconds
        rec = RepeatRecord(
            seed=seed,
            per_client_seconds=timing.per_client_seconds.tolist(),
            coordinator_seconds=timing.coordinator_seconds,
            training_time_seconds=timing.training_time_seconds,
            sum_cpu_seconds=cpu,
            watt_hours=watt_hours(cfg.device_watts, cpu),
            accuracy_test=accuracy(test, weights),
            accuracy_train=accuracy(train, weights),
        )
        log.info("clients=%d repeat=%d acc_test=%.4f train_time=%.4fs",
                 cfg.num_clients, r, rec.accuracy_test, rec.training_time_seconds)
        records.append(rec)

    per_client = np.mean([rec.per_client_seconds for rec in records], axis=0)
    report = MetricsReport.from_timings(
        per_client,
        float(np.mean([rec.coordinator_seconds for rec in records])),
        cfg.device_watts,
        num_clients=cfg.num_clients,
        partition_mode=cfg.partition_mode.value,
        lam=cfg.lam,
        accuracy_test=float(np.mean([rec.accuracy_test for rec in records])),
        accuracy_train=float(np.mean([rec.accuracy_train for rec in records])),
        repeats=records,
    )
    report.weights = first_weights
    return report


def training_size(ds: Dataset, train_fraction: float) -> int:
    return int(np.floor(train_fraction * ds.num_samples))


def sweep_clients(ds: Dataset, cfg: SimulationConfig, client_counts: Sequence[int]) -> list[MetricsReport]:
    """One report per client count, all sharing ``cfg``'s seed family."""
    n_train = training_size(ds, cfg.train_fraction)
    for count in client_counts:
        if not 1 <= count <= n_train:
            raise ArgumentError(f"client count {count} outside [1, {n_train}]")
    reports = []
    for count in client_counts:
        sub = SimulationConfig(**{**cfg.__dict__, "num_clients": int(count)})
        reports.append(run_experiment(ds, sub))
    return reports


SWEEP_COLUMNS = ("clients", "accuracy_test", "training_time_s", "sum_cpu_s", "watt_hours")


def sweep_rows(reports: Sequence[MetricsReport]) -> list[tuple]:
    return [
        (r.num_clients, r.accuracy_test, r.training_time_seconds, r.sum_cpu_seconds, r.watt_hours)
        for r in reports
    ]
