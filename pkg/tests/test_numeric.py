import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fedsvd.errors import ArgumentError, DomainError, ShapeError
from fedsvd.numeric import (
    ActivationSpec,
    SvdFactors,
    act_derivative_at,
    act_forward,
    act_inverse,
    economy_svd,
    merge_svd,
)
from oracles import singular_values, singular_values_eig

LN19 = math.log(19.0)


@pytest.mark.parametrize("d, expected", [(0.5, 0.0), (0.95, LN19), (0.05, -LN19)])
def test_act_inverse_examples(d, expected):
    assert act_inverse(np.array([d]))[0] == pytest.approx(expected, abs=1e-12)


def test_act_inverse_ln19_value():
    assert act_inverse(0.95) == pytest.approx(2.9444389792, abs=1e-10)


@pytest.mark.parametrize("bad", [0.0, 1.0, 0.01, 0.99, -3.0, np.nan])
def test_act_inverse_rejects_out_of_range(bad):
    with pytest.raises(DomainError, match="outside valid range"):
        act_inverse(np.array([0.5, bad]))


@pytest.mark.parametrize("z, expected", [(0.0, 0.25), (LN19, 0.0475), (-LN19, 0.0475)])
def test_act_derivative_examples(z, expected):
    assert act_derivative_at(np.array([z]))[0] == pytest.approx(expected, abs=1e-12)


def test_act_derivative_rejects_non_finite():
    with pytest.raises(DomainError):
        act_derivative_at(np.array([0.0, np.inf]))


def test_epsilon_clip_bounds():
    with pytest.raises(ArgumentError):
        ActivationSpec(epsilon_clip=0.5)
    with pytest.raises(ArgumentError):
        ActivationSpec(epsilon_clip=0.0)
    wide = ActivationSpec(epsilon_clip=0.001)
    assert np.isfinite(act_inverse(0.999, wide))


def test_forward_is_stable_for_large_inputs():
    y = act_forward(np.array([-800.0, 800.0]))
    assert np.all(np.isfinite(y))
    assert y[0] == 0.0 and y[1] == 1.0


d_strategy = arrays(np.float64, st.integers(1, 30), elements=st.floats(0.05, 0.95))


@given(d_strategy)
def test_forward_inverse_round_trip(d):
    np.testing.assert_allclose(act_forward(act_inverse(d)), d, rtol=0, atol=1e-12)


@given(d_strategy)
def test_derivative_at_inverse_is_d_times_one_minus_d(d):
    np.testing.assert_allclose(act_derivative_at(act_inverse(d)), d * (1 - d), rtol=0, atol=1e-12)


@given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-1e6, 1e6)))
def test_forward_range(z):
    y = act_forward(z)
    assert np.all((y >= 0) & (y <= 1))


# -- economy_svd ----------------------------------------------------------------


def test_svd_identity():
    f = economy_svd(np.eye(2))
    np.testing.assert_allclose(f.s, [1.0, 1.0], atol=1e-15)
    assert f.rank == 2


def test_svd_column_vector():
    f = economy_svd(np.array([[3.0], [4.0]]))
    assert f.rank == 1
    assert f.s[0] == pytest.approx(5.0, abs=1e-14)


@pytest.mark.parametrize("shape", [(5, 8), (8, 5), (6, 6), (3, 400)])
def test_svd_matches_reference(rng, shape):
    a = rng.normal(size=shape)
    f = economy_svd(a)
    ref = singular_values(a)
    np.testing.assert_allclose(f.s, ref, rtol=1e-10)
    np.testing.assert_allclose(f.s, singular_values_eig(a)[: len(ref)], rtol=1e-8)
    np.testing.assert_allclose(f.u.T @ f.u, np.eye(f.rank), atol=1e-10)
    assert np.all(np.diff(f.s) <= 0) and np.all(f.s >= 0)
    assert np.sum(f.s**2) == pytest.approx(np.sum(a**2), rel=1e-9)


@pytest.mark.parametrize("shape", [(5, 8), (10, 3), (4, 1000)])
def test_svd_gram_reconstruction(rng, shape):
    a = rng.normal(size=shape)
    f = economy_svd(a)
    gram = a @ a.T
    err = np.linalg.norm((f.u * f.s**2) @ f.u.T - gram) / np.linalg.norm(gram)
    assert err < 1e-8


def test_svd_truncates_rank_deficient(rng):
    b = rng.normal(size=(6, 2))
    a = b @ rng.normal(size=(2, 9))
    f = economy_svd(a)
    assert f.rank == 2
    assert f.u.shape == (6, 2)


def test_svd_zero_matrix_has_rank_zero():
    f = economy_svd(np.zeros((4, 3)))
    assert f.rank == 0 and f.u.shape == (4, 0)


def test_svd_rejects_empty_and_non_finite():
    with pytest.raises(ArgumentError):
        economy_svd(np.zeros((3, 0)))
    with pytest.raises(DomainError):
        economy_svd(np.array([[1.0, np.nan]]))


# -- merge_svd --------------------------------------------------------------------


def test_merge_with_empty_is_identity(rng):
    f = economy_svd(rng.normal(size=(5, 7)))
    z = SvdFactors.empty(5)
    for merged in (merge_svd(f, z), merge_svd(z, f)):
        np.testing.assert_array_equal(merged.s, f.s)
        np.testing.assert_array_equal(np.abs(merged.u), np.abs(f.u))


def test_merge_matches_concatenated_svd(rng):
    for _ in range(20):
        a1, a2 = rng.normal(size=(6, 10)), rng.normal(size=(6, 10))
        merged = merge_svd(economy_svd(a1), economy_svd(a2))
        np.testing.assert_allclose(merged.s, singular_values(np.hstack([a1, a2])), rtol=1e-9)


def test_merge_with_self_doubles_energy(rng):
    f = economy_svd(rng.normal(size=(5, 12)))
    merged = merge_svd(f, f)
    assert np.sum(merged.s**2) == pytest.approx(2 * np.sum(f.s**2), rel=1e-9)


def test_merge_rejects_row_mismatch(rng):
    with pytest.raises(ShapeError):
        merge_svd(economy_svd(rng.normal(size=(4, 3))), economy_svd(rng.normal(size=(5, 3))))


def test_merge_rank_bounded_by_features(rng):
    f = economy_svd(rng.normal(size=(4, 30)))
    merged = merge_svd(f, economy_svd(rng.normal(size=(4, 30))))
    assert merged.rank <= 4


block_cols = st.integers(1, 12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 8), block_cols, block_cols, block_cols)
def test_merge_associative_and_commutative(seed, rows, c1, c2, c3):
    rng = np.random.default_rng(seed)
    a, b, c = (economy_svd(rng.normal(size=(rows, k))) for k in (c1, c2, c3))
    left = merge_svd(merge_svd(a, b), c).s
    right = merge_svd(a, merge_svd(b, c)).s
    np.testing.assert_allclose(left, right, rtol=1e-8)
    np.testing.assert_allclose(merge_svd(a, b).s, merge_svd(b, a).s, rtol=1e-8)
