import numpy as np
import pytest

from fedsvd.data import PartitionMode, PartitionPlan, make_blobs, split_train_test, encode_targets
from fedsvd.errors import ArgumentError
from fedsvd.model import add_bias, fit_centralized
from fedsvd.simulator import (
    MetricsReport,
    SimulationConfig,
    run_experiment,
    run_round,
    sweep_clients,
    sweep_rows,
    watt_hours,
)
from oracles import rel_inf


@pytest.fixture(scope="module")
def blobs():
    return make_blobs(1500, num_features=6, num_classes=3, separation=10.0, seed=11)


def centralized(train):
    return fit_centralized(add_bias(train.features), encode_targets(train.labels, train.class_list), 1e-3).w


def test_metric_identities_on_synthetic_timings():
    per_client = [0.25, 1.5, 0.75, 0.125]
    r = MetricsReport.from_timings(per_client, 0.5, 65.0)
    assert r.training_time_seconds == max(per_client) + 0.5
    assert r.sum_cpu_seconds == sum(per_client) + 0.5
    assert r.watt_hours == 65.0 * r.sum_cpu_seconds / 3600


def test_watt_hour_unit():
    assert watt_hours(65, 3600) == 65.0
    r = MetricsReport.from_timings([3599.0], 1.0, 65.0)
    assert r.watt_hours == 65.0


def test_config_validation():
    for bad in ({"num_clients": 0}, {"repeats": 0}, {"lam": -1.0}, {"device_watts": 0.0}):
        with pytest.raises(ArgumentError):
            SimulationConfig(**bad)


def test_single_client_round_is_centralized(blobs):
    train, _ = split_train_test(blobs, 0.7, seed=0)
    w, timing = run_round(train, PartitionPlan(num_clients=1), SimulationConfig())
    np.testing.assert_array_equal(w.w, centralized(train))
    assert len(timing.per_client_seconds) == 1
    assert timing.training_time_seconds == timing.per_client_seconds[0] + timing.coordinator_seconds


@pytest.mark.parametrize("mode", list(PartitionMode))
@pytest.mark.parametrize("parallel", [False, True])
def test_seven_client_round_matches_centralized(blobs, mode, parallel):
    train, _ = split_train_test(blobs, 0.7, seed=0)
    cfg = SimulationConfig(parallel_clients=parallel, max_workers=3)
    w, timing = run_round(train, PartitionPlan(mode, 7, seed=1), cfg)
    assert rel_inf(w.w, centralized(train)) < 1e-8
    assert len(timing.per_client_seconds) == 7


def test_modes_give_identical_accuracy(blobs):
    accs = [run_experiment(blobs, SimulationConfig(num_clients=10, partition_mode=m, repeats=1)).accuracy_test
            for m in PartitionMode]
    assert round(accs[0], 4) == round(accs[1], 4)


def test_experiment_aggregates_repeats(blobs):
    cfg = SimulationConfig(num_clients=5, repeats=3, device_watts=65.0, seed=7)
    r = run_experiment(blobs, cfg)
    assert r.repeats_aggregated == 3 and len(r.repeats) == 3
    assert [rec.seed for rec in r.repeats] == [7, 8, 9]
    assert r.accuracy_test == pytest.approx(np.mean([x.accuracy_test for x in r.repeats]), abs=0)
    assert r.training_time_seconds == max(r.per_client_seconds) + r.coordinator_seconds
    assert r.sum_cpu_seconds == sum(r.per_client_seconds) + r.coordinator_seconds
    assert r.watt_hours == 65.0 * r.sum_cpu_seconds / 3600
    for rec in r.repeats:
        assert rec.training_time_seconds == max(rec.per_client_seconds) + rec.coordinator_seconds
        assert rec.sum_cpu_seconds == sum(rec.per_client_seconds) + rec.coordinator_seconds
    assert "weights" not in r.to_dict()


@pytest.mark.parametrize("p", [1, 10, 100])
def test_separable_accuracy(blobs, p):
    assert run_experiment(blobs, SimulationConfig(num_clients=p, repeats=1)).accuracy_test >= 0.99


def test_determinism(blobs):
    cfg = SimulationConfig(num_clients=9, partition_mode="label_sorted", repeats=2, seed=3)
    a, b = run_experiment(blobs, cfg), run_experiment(blobs, cfg)
    np.testing.assert_array_equal(a.weights.w, b.weights.w)
    assert a.accuracy_test == b.accuracy_test and a.accuracy_train == b.accuracy_train


def test_sweep(blobs):
    cfg = SimulationConfig(repeats=1, seed=2)
    reports = sweep_clients(blobs, cfg, [1, 10, 100])
    assert [r.num_clients for r in reports] == [1, 10, 100]
    accs = [row[1] for row in sweep_rows(reports)]
    assert max(accs) - min(accs) <= 1e-4
    single = run_experiment(blobs, cfg)
    assert sweep_clients(blobs, cfg, [1])[0].accuracy_test == single.accuracy_test
    with pytest.raises(ArgumentError):
        sweep_clients(blobs, cfg, [1, 10_000])
