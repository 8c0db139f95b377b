import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from randnet.errors import DimensionError, SparsityError
from randnet.measurement import (ChainedOperator, GAUSSIAN, IDENTITY, MeasurementMatrix, ROW_SPARSE,
                                 adjoint, gen_gaussian, gen_row_sparse, generate, identity, project)
from randnet.rng import derive_seed, make_rng, splitmix64

from oracles import dense_row_sparse


def test_splitmix64_reference_value():
    # first output of the published SplitMix64 generator seeded with 0
    assert splitmix64(0) == 0xE220A8397B1DCDAF


def test_derive_seed_separates_keys():
    seeds = {derive_seed(7, b) for b in range(1000)}
    assert len(seeds) == 1000
    assert derive_seed(7, 3) == derive_seed(7, 3)


def test_gaussian_deterministic():
    a, b = gen_gaussian(2, 4, seed=7), gen_gaussian(2, 4, seed=7)
    assert a.same_storage(b)
    assert not a.same_storage(gen_gaussian(2, 4, seed=8))


def test_gaussian_beta():
    assert gen_gaussian(250, 500, seed=0).beta == 0.5


def test_gaussian_sample_mean_bound():
    # 100 seeds: largest observed |mean| * sqrt(MN) was 0.10, bound is 4
    M, N = 392, 784
    for seed in range(100):
        assert abs(gen_gaussian(M, N, seed=seed).dense_values.mean()) < 4 / np.sqrt(M * N)


@pytest.mark.parametrize("variance,expected", [("rows", 1 / 200), ("cols", 1 / 400), ("unit", 1.0)])
def test_gaussian_variance_policies(variance, expected):
    phi = gen_gaussian(200, 400, seed=1, variance=variance)
    assert phi.dense_values.var() == pytest.approx(expected, rel=0.02)


@pytest.mark.parametrize("M,N", [(0, 4), (5, 4), (3, 0)])
def test_gaussian_bad_dims(M, N):
    with pytest.raises(DimensionError):
        gen_gaussian(M, N, seed=0)


def test_row_sparse_one_per_row():
    phi = gen_row_sparse(3, 10, 1, seed=4)
    D = phi.dense()
    assert np.all(np.count_nonzero(D, axis=1) == 1)
    assert set(np.unique(D[D != 0])) <= {-1.0, 1.0}


def test_row_sparse_1x1():
    D = gen_row_sparse(1, 1, 1, seed=11).dense()
    assert D.shape == (1, 1) and abs(D[0, 0]) == 1.0


def test_row_sparse_nnz():
    assert np.count_nonzero(gen_row_sparse(392, 784, 1, seed=0).dense()) == 392


def test_row_sparse_s_too_large():
    with pytest.raises(SparsityError):
        gen_row_sparse(3, 4, 5, seed=0)


@settings(max_examples=40, deadline=None)
@given(M=st.integers(1, 30), extra=st.integers(0, 30), s=st.integers(1, 8), seed=st.integers(0, 2 ** 64 - 1))
def test_row_sparse_rows_distinct(M, extra, s, seed):
    N = M + extra
    s = min(s, N)
    phi = gen_row_sparse(M, N, s, seed)
    for row in phi.indices:
        assert len(set(row.tolist())) == s
    assert set(np.unique(phi.signs).tolist()) <= {-1, 1}
    assert phi.same_storage(gen_row_sparse(M, N, s, seed))


def test_identity_project_adjoint():
    y = np.arange(5.0)
    phi = identity(5)
    assert np.array_equal(project(phi, y), y)
    assert np.array_equal(adjoint(phi, y), y)


def test_single_row_selects_entry():
    phi = MeasurementMatrix(ROW_SPARSE, 1, 6, s=1, indices=np.array([[4]]), signs=np.array([[1]], dtype=np.int8))
    y = np.arange(6.0) * 3
    assert project(phi, y)[0] == y[4]


def test_row_sparse_matches_dense_oracle():
    phi = gen_row_sparse(50, 100, 3, seed=2)
    D = dense_row_sparse(50, 100, phi.indices, phi.signs)
    rng = make_rng(0)
    for _ in range(20):
        y, r = rng.standard_normal(100), rng.standard_normal(50)
        assert np.max(np.abs(phi.project(y) - D @ y)) <= 1e-12
        assert np.max(np.abs(phi.adjoint(r) - D.T @ r)) <= 1e-12


def test_row_sparse_adjoint_support():
    phi = gen_row_sparse(20, 200, 2, seed=5)
    assert np.count_nonzero(phi.adjoint(np.ones(20))) <= 2 * 20


@pytest.mark.parametrize("kind", [IDENTITY, GAUSSIAN, ROW_SPARSE])
def test_adjoint_consistency(kind):
    N = 40
    M = N if kind == IDENTITY else 17
    phi = generate(kind, M, N, s=3, seed=9)
    rng = make_rng(1)
    for _ in range(100):
        y, r = rng.standard_normal(N) * 10, rng.standard_normal(M)
        lhs, rhs = phi.project(y) @ r, y @ phi.adjoint(r)
        assert abs(lhs - rhs) <= 1e-10 * (np.linalg.norm(y) * np.linalg.norm(r) + 1)


def test_length_mismatch():
    phi = gen_gaussian(3, 5, seed=0)
    with pytest.raises(DimensionError):
        phi.project(np.ones(4))
    with pytest.raises(DimensionError):
        phi.adjoint(np.ones(5))


def test_json_roundtrip_five_fields():
    phi = gen_row_sparse(30, 60, 2, seed=2 ** 63 + 5)
    d = json.loads(phi.to_json())
    assert set(d) == {"kind", "M", "N", "s", "seed"}
    assert MeasurementMatrix.from_json(phi.to_json()).same_storage(phi)
    g = gen_gaussian(10, 20, seed=3)
    assert MeasurementMatrix.from_dict(g.to_dict()).same_storage(g)
    with pytest.raises(DimensionError):
        MeasurementMatrix.from_dict({**d, "dense": []})


def test_storage_constant_size():
    small, big = gen_gaussian(5, 10, seed=0), gen_gaussian(500, 1000, seed=0)
    assert small.stored_bytes() == big.stored_bytes() == 40
    assert big.materialized_bytes() == 500 * 1000 * 8


@pytest.mark.parametrize("kind", [GAUSSIAN, ROW_SPARSE, IDENTITY])
def test_chained_operator_matches_dense(kind):
    N, p = 30, 5
    M = N if kind == IDENTITY else 12
    phi = generate(kind, M, N, s=2, seed=4)
    A = make_rng(2).standard_normal((N, p))
    op = ChainedOperator(phi, A)
    D = phi.dense() @ A
    x, r = make_rng(3).standard_normal(p), make_rng(4).standard_normal(M)
    np.testing.assert_allclose(op.forward(x), D @ x, atol=1e-12)
    np.testing.assert_allclose(op.adjoint(r), D.T @ r, atol=1e-12)
    np.testing.assert_allclose(op.compose(), D, atol=1e-12)
