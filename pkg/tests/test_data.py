import gzip

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedsvd.data import (
    Dataset,
    PartitionMode,
    PartitionPlan,
    encode_targets,
    iter_csv_chunks,
    load_csv,
    make_blobs,
    minmax_scale,
    partition,
    partition_indices,
    replicate,
    split_train_test,
    write_csv,
)
from fedsvd.errors import ArgumentError, EncodingError, FormatError, IngestError


def test_load_csv_basic(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("1,2,A\n3,4,B\n")
    ds = load_csv(p, label_column=2)
    np.testing.assert_array_equal(ds.features, [[1, 3], [2, 4]])
    assert ds.class_list == ("A", "B")
    assert ds.labels.tolist() == ["A", "B"]


def test_load_csv_empty_file(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("")
    with pytest.raises(IngestError):
        load_csv(p)


def test_load_csv_header_and_named_column(tmp_path):
    p = tmp_path / "h.csv"
    p.write_text("y,a,b\nB,1,2\nA,3,4\nB,5,6\n")
    ds = load_csv(p, label_column="y", has_header=True)
    assert ds.num_samples == 3
    np.testing.assert_array_equal(ds.features[:, 0], [1, 2])
    assert ds.class_list == ("A", "B")


def test_load_csv_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("1,2,A\n3,x,B\n")
    with pytest.raises(IngestError, match="row 2, column 2"):
        load_csv(p)
    p.write_text("1,2,A\n3,B\n")
    with pytest.raises(FormatError, match="row 2"):
        load_csv(p)
    with pytest.raises(IngestError):
        load_csv(tmp_path / "missing.csv")


def test_load_csv_gzip_and_unlabeled(tmp_path):
    p = tmp_path / "d.csv.gz"
    with gzip.open(p, "wt") as fh:
        fh.write("1,2\n3,4\n5,6\n")
    ds = load_csv(p, label_column=None)
    assert ds.labels is None and ds.features.shape == (2, 3)


def test_write_then_load_round_trip(tmp_path):
    ds = make_blobs(50, 3, 2, seed=4)
    write_csv(ds, tmp_path / "b.csv")
    back = load_csv(tmp_path / "b.csv")
    np.testing.assert_array_equal(back.features, ds.features)
    np.testing.assert_array_equal(back.labels, ds.labels)


def test_iter_csv_chunks(tmp_path):
    ds = make_blobs(23, 2, 2, seed=1)
    write_csv(ds, tmp_path / "c.csv")
    chunks = list(iter_csv_chunks(tmp_path / "c.csv", 10, ds.class_list))
    assert [c.num_samples for c in chunks] == [10, 10, 3]
    np.testing.assert_array_equal(np.hstack([c.features for c in chunks]), ds.features)
    assert all(c.class_list == ds.class_list for c in chunks)


# -- targets -----------------------------------------------------------------------


def test_encode_targets():
    d = encode_targets(["A"], ["A", "B"])
    np.testing.assert_array_equal(d, [[0.95, 0.05]])
    labels = ["B", "C", "A", "C"]
    d = encode_targets(labels, ["A", "B", "C"])
    np.testing.assert_allclose(d.sum(axis=1), 0.05 * 2 + 0.95)
    assert np.argmax(d, axis=1).tolist() == [1, 2, 0, 2]
    with pytest.raises(EncodingError):
        encode_targets(["Z"], ["A", "B"])
    with pytest.raises(ArgumentError):
        encode_targets(["A"], ["A", "B"], low=0.6, high=0.4)


# -- split ---------------------------------------------------------------------------


def _indexed(n, classes=2):
    return Dataset(np.arange(n, dtype=float)[None, :], np.array([str(i % classes) for i in range(n)]))


def test_split_sizes_and_cover():
    ds = _indexed(10)
    tr, te = split_train_test(ds, 0.7, seed=1)
    assert (tr.num_samples, te.num_samples) == (7, 3)
    ids = np.concatenate([tr.features[0], te.features[0]])
    assert sorted(ids.tolist()) == list(range(10))


def test_split_determinism():
    ds = _indexed(100)
    a = split_train_test(ds, 0.7, seed=5)[0].features
    b = split_train_test(ds, 0.7, seed=5)[0].features
    c = split_train_test(ds, 0.7, seed=6)[0].features
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_split_degenerate():
    with pytest.raises(ArgumentError):
        split_train_test(_indexed(1), 0.7)
    with pytest.raises(ArgumentError):
        split_train_test(_indexed(2), 0.4)
    with pytest.raises(ArgumentError):
        split_train_test(_indexed(10), 1.0)


# -- partition -------------------------------------------------------------------------


@pytest.mark.parametrize("mode", list(PartitionMode))
def test_single_client_gets_everything(mode):
    ds = _indexed(30)
    (shard,) = partition(ds, PartitionPlan(mode, 1, seed=2))
    assert shard.features[0].tolist() == list(range(30))


def test_label_sorted_two_classes():
    labels = np.array(["1"] * 100 + ["0"] * 100)
    ds = Dataset(np.zeros((1, 200)), labels)
    shards = partition(ds, PartitionPlan(PartitionMode.LABEL_SORTED, 20))
    assert all(set(s.labels) == {"0"} for s in shards[:10])
    assert all(set(s.labels) == {"1"} for s in shards[10:])


@pytest.mark.parametrize("n, expected", [(3_500_000, 175), (7_700_000, 385)])
def test_large_scale_shard_sizes(n, expected):
    shards = partition_indices(n, PartitionPlan(PartitionMode.IID_SHUFFLE, 20_000, seed=0))
    assert {len(s) for s in shards} == {expected}


def test_partition_rejects_too_many_clients():
    with pytest.raises(ArgumentError):
        partition(_indexed(5), PartitionPlan(num_clients=6))
    with pytest.raises(ArgumentError):
        PartitionPlan(num_clients=0)


def test_partition_mode_parse():
    assert PartitionMode.parse("label-sorted") is PartitionMode.LABEL_SORTED
    assert PartitionMode.parse("iid") is PartitionMode.IID_SHUFFLE
    with pytest.raises(ValueError):
        PartitionMode.parse("dirichlet")


@settings(max_examples=60, deadline=None)
@given(
    n=st.integers(1, 400),
    p=st.integers(1, 50),
    classes=st.integers(1, 5),
    seed=st.integers(0, 10_000),
    mode=st.sampled_from(list(PartitionMode)),
)
def test_partition_invariants(n, p, classes, seed, mode):
    p = min(p, n)
    rng = np.random.default_rng(seed)
    class_idx = rng.integers(0, classes, size=n)
    plan = PartitionPlan(mode, p, seed)
    shards = partition_indices(n, plan, class_idx)
    sizes = {len(s) for s in shards}
    assert sizes <= {n // p, -(-n // p)}
    flat = np.concatenate(shards)
    assert sorted(flat.tolist()) == list(range(n))
    again = partition_indices(n, plan, class_idx)
    assert all(np.array_equal(a, b) for a, b in zip(shards, again))
    if mode is PartitionMode.IID_SHUFFLE and n / p >= classes:
        for k in range(classes):
            exact = np.count_nonzero(class_idx == k) / p
            counts = [np.count_nonzero(class_idx[s] == k) for s in shards]
            assert all(abs(c - exact) <= 1 for c in counts)


def test_replicate_and_minmax():
    ds = make_blobs(10, 2, 2, seed=0)
    r = replicate(ds, 4)
    assert r.num_samples == 40
    np.testing.assert_array_equal(r.features[:, 10:20], ds.features)
    (scaled,) = minmax_scale(ds)
    assert scaled.features.min() == 0.0 and scaled.features.max() == 1.0
    with pytest.raises(ArgumentError):
        replicate(ds, 0)
