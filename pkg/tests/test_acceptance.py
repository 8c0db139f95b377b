"""One test group per acceptance criterion; ``conftest.py`` prints a pass/fail line for each.

MNIST criteria read the four standard IDX files (optionally gzipped) from
``$RANDNET_DATA_DIR`` and skip when they are absent. The overnight
full-scale run and the seven-fold λ sweep also need ``RANDNET_LONG=1``.
"""

import os
import time
from pathlib import Path

import numpy as np
import pytest

from randnet.bench import bench_case
from randnet.data import SimConfig, load_mnist_idx, partition_and_compress, simulate
from randnet.dictionary import estimate_lipschitz, init_dictionary, normalize_columns
from randnet.encoder import fista_encode
from randnet.grad import check_unsupervised
from randnet.measurement import generate
from randnet.model import init_classifier, softmax
from randnet.rng import make_rng
from randnet.train import (TrainConfig, dict_error, eval_classification, perturb_dictionary,
                           train_classifier, train_unsupervised)
import randnet.train as train_mod

from oracles import cd_lasso, lasso_value

MNIST_FILES = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte",
               "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")


# ---- criterion 1: gradient oracle

def test_c1_gradient_oracle(record_property):
    rng = make_rng(2024)
    t0 = time.perf_counter()
    worst, count = 0.0, 0
    for i in range(60):
        kind = ("gaussian", "row_sparse")[i % 2]
        N = int(rng.integers(6, 17))
        kw = dict(N=N, p=int(rng.integers(2, 7)), M=int(rng.integers(3, N)), T=int(rng.integers(2, 9)))
        rep = check_unsupervised(1000 + i, kind, h=1e-6, **kw)
        if rep.checked:
            count += 1
            worst = max(worst, float(rep))
    elapsed = time.perf_counter() - t0
    record_property("detail", f"{count} instances, max rel err {worst:.2e}, {elapsed:.1f}s")
    assert count >= 50
    assert worst <= 1e-5
    assert elapsed < 60


# ---- criterion 2: lasso oracle

def test_c2_lasso_oracle(record_property):
    rng = make_rng(77)
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(20):
        kind = ("gaussian", "row_sparse", "identity")[i % 3]
        N, p = int(rng.integers(10, 30)), int(rng.integers(3, 9))
        M = N if kind == "identity" else int(rng.integers(p, N))
        A = normalize_columns(rng.standard_normal((N, p)))
        phi = generate(kind, M, N, s=2, seed=int(rng.integers(2**32)))
        x0 = np.zeros(p)
        x0[rng.choice(p, 2, replace=False)] = rng.uniform(1, 2, 2) * rng.choice([-1, 1], 2)
        r = phi.project(A @ x0) + 0.05 * rng.standard_normal(M)
        lam = float(rng.uniform(0.02, 0.3))
        L = estimate_lipschitz(A, phi, iters=2000, tol=1e-12)
        B = phi.dense() @ A
        x, _ = fista_encode(r, A, phi, lam, L, 2000)
        f, f_ref = lasso_value(B, r, x, lam), lasso_value(B, r, cd_lasso(B, r, lam), lam)
        worst = max(worst, abs(f - f_ref) / abs(f_ref))
    elapsed = time.perf_counter() - t0
    record_property("detail", f"20 instances, max rel objective gap {worst:.2e}, {elapsed:.1f}s")
    assert worst <= 1e-6
    assert elapsed < 60


# ---- criterion 3: simulated dictionary recovery

@pytest.fixture(scope="module")
def sim_split():
    ds, A = simulate(SimConfig(N=500, p=20, J=4250, k=3, seed=3))
    train, _ = ds.split(4000)
    return train, A, perturb_dictionary(A, 0.5, seed=5)


@pytest.mark.parametrize("kind,beta,bound", [
    ("identity", 1.0, 0.1), ("gaussian", 0.5, 0.1), ("gaussian", 0.3, 0.1),
    ("row_sparse", 0.5, 0.1), ("row_sparse", 0.3, 0.1), ("gaussian", 0.1, 0.2)])
def test_c3_simulation_recovery(sim_split, record_property, kind, beta, bound):
    train, A, A0 = sim_split
    M = 500 if kind == "identity" else int(round(beta * 500))
    data = partition_and_compress(train, 40, kind, M, s=1, master_seed=3)
    cfg = TrainConfig(sigma=0.1, T=400, batch_size=64, learning_rate=1e-3, epochs=10, seed=0)
    t0 = time.perf_counter()
    _, hist = train_unsupervised(data, A0, cfg, A_true=A)
    err = hist[-1].err
    record_property("detail", f"{kind} beta={beta}: err {dict_error(A, A0):.3f} -> {err:.4f} "
                              f"(bound {bound}), {time.perf_counter() - t0:.0f}s")
    assert err < bound


# ---- criteria 4-6: MNIST

def _mnist_dir():
    root = os.environ.get("RANDNET_DATA_DIR")
    if not root:
        pytest.skip("RANDNET_DATA_DIR not set; MNIST IDX files unavailable")
    paths = []
    for name in MNIST_FILES:
        cands = [Path(root) / name, Path(root) / (name + ".gz")]
        found = next((c for c in cands if c.exists()), None)
        if found is None:
            pytest.skip(f"{name} not found under {root}")
        paths.append(found)
    return paths


def _mnist(n_train, n_test):
    tri, trl, tei, tel = _mnist_dir()
    train, test = load_mnist_idx(tri, trl), load_mnist_idx(tei, tel)
    if train.J < n_train or test.J < n_test:
        pytest.skip(f"need {n_train}/{n_test} images, found {train.J}/{test.J}")
    return train.take(np.arange(n_train)), test.take(np.arange(n_test))


def _require_long():
    if os.environ.get("RANDNET_LONG") != "1":
        pytest.skip("long-running criterion; set RANDNET_LONG=1")


def _mnist_run(train, test, kind, lam, blocks, epochs=20, seed=0):
    M = 392
    tr = partition_and_compress(train, blocks, kind, M, s=1, master_seed=seed, keep_examples=False)
    te_blocks = max(1, int(round(blocks * test.J / train.J)))
    te = partition_and_compress(test, te_blocks, kind, M, s=1, master_seed=seed, block_offset=blocks,
                                keep_examples=False)
    cfg = TrainConfig(lam=lam, L=50.0, T=60, batch_size=16, learning_rate=0.005, epochs=epochs, seed=seed)
    A0 = init_dictionary(784, 784, seed + 1)
    A, _ = train_unsupervised(tr, A0, cfg)
    params, _ = train_classifier(tr, A, init_classifier(10, 784, seed + 2), cfg)
    return eval_classification(te, A, params, cfg)


def test_c4_mnist_desk_scale(record_property):
    train, test = _mnist(10_000, 2_000)
    t0 = time.perf_counter()
    # 100 images per block; with a single block A is only learned up to that Phi's null space
    err = _mnist_run(train, test, "gaussian", 2.2, blocks=100)
    record_property("detail", f"test error {100 * err:.2f}% (bound 8%), {time.perf_counter() - t0:.0f}s")
    assert err <= 0.08


@pytest.mark.parametrize("kind,target,spread", [("gaussian", 1.56, 0.5), ("row_sparse", 3.16, 0.7)])
def test_c5_mnist_full_scale(record_property, kind, target, spread):
    _require_long()
    train, test = _mnist(60_000, 10_000)
    lam = 2.2 if kind == "gaussian" else 2.0
    err = 100 * _mnist_run(train, test, kind, lam, blocks=1000)
    record_property("detail", f"{kind}: test error {err:.2f}% (target {target} +- {spread})")
    assert abs(err - target) <= spread


def test_c6_lambda_sweep_shape(record_property):
    _require_long()
    train, test = _mnist(10_000, 2_000)
    grid = [0.5, 1.0, 1.5, 2.0, 2.2, 3.0, 4.0]
    errs = [_mnist_run(train, test, "gaussian", lam, blocks=100) for lam in grid]
    best = int(np.argmin(errs))
    record_property("detail", "errors % " + ", ".join(f"{l}:{100 * e:.2f}" for l, e in zip(grid, errs)))
    assert 0 < best < len(grid) - 1
    assert errs[0] > errs[best] and errs[-1] > errs[best]


# ---- criterion 7: efficiency ordering

def test_c7_efficiency_ordering(record_property):
    A = init_dictionary(4096, 256, 1)
    dense = bench_case("gaussian", 4096, 256, 0.1, T=10, repeats=3, A=A)
    sparse = bench_case("row_sparse", 4096, 256, 0.1, s=1, T=10, repeats=3, A=A)
    stored = {generate("row_sparse", M, N, s=1, seed=7).stored_bytes() for N, M in [(64, 6), (4096, 410)]}
    record_property("detail", f"encode {sparse['encode_s']:.2e}s vs {dense['encode_s']:.2e}s, "
                              f"stored bytes {sorted(stored)}")
    assert sparse["encode_s"] < dense["encode_s"]
    assert len(stored) == 1


# ---- criterion 8: metric and invariant suite

def test_c8_dict_error_invariances():
    rng = make_rng(8)
    for _ in range(20):
        A, B = rng.standard_normal((30, 6)), rng.standard_normal((30, 6))
        e = dict_error(A, B)
        perm, flips = rng.permutation(6), rng.choice([-1.0, 1.0], 6)
        assert dict_error(A[:, perm], B[:, perm]) == pytest.approx(e, abs=1e-12)
        assert dict_error(A * flips, B) == pytest.approx(e, abs=1e-12)
        assert dict_error(A, A * flips) <= 1e-7


@pytest.mark.parametrize("kind", ["gaussian", "row_sparse", "identity"])
def test_c8_adjoint_consistency(kind):
    rng = make_rng(81)
    for N, M in [(50, 20), (300, 90)]:
        phi = generate(kind, N if kind == "identity" else M, N, s=3, seed=int(rng.integers(2**32)))
        y, r = rng.standard_normal(N), rng.standard_normal(phi.M)
        lhs, rhs = float(r @ phi.project(y)), float(phi.adjoint(r) @ y)
        assert abs(lhs - rhs) <= 1e-12 * np.linalg.norm(r) * np.linalg.norm(y) * np.sqrt(N)


def test_c8_softmax_normalization():
    q = make_rng(82).standard_normal((200, 10)) * 50
    u = softmax(q)
    assert np.all(u >= 0) and np.max(np.abs(u.sum(axis=1) - 1)) <= 1e-12


@pytest.fixture(scope="module")
def small_train():
    ds, A = simulate(SimConfig(N=100, p=10, J=600, seed=4))
    data = partition_and_compress(ds, 6, "gaussian", 50, master_seed=2)
    cfg = TrainConfig(sigma=0.1, T=100, batch_size=32, learning_rate=1e-3, epochs=2, seed=5)
    return data, perturb_dictionary(A, 0.5, seed=8), cfg


def test_c8_column_norms_after_every_step(small_train, monkeypatch):
    data, A0, cfg = small_train
    seen = []
    real = train_mod.normalize_columns

    def spy(M):
        out = real(M)
        seen.append(np.abs(np.linalg.norm(out, axis=0) - 1).max())
        return out

    monkeypatch.setattr(train_mod, "normalize_columns", spy)
    train_unsupervised(data, A0, cfg)
    assert len(seen) == 2 * int(np.ceil(600 / 32))
    assert max(seen) <= 1e-10


def test_c8_bitwise_reproducible(small_train):
    data, A0, cfg = small_train
    a1, h1 = train_unsupervised(data, A0, cfg)
    a2, h2 = train_unsupervised(data, A0, cfg)
    assert a1.tobytes() == a2.tobytes()
    assert h1.deterministic_view() == h2.deterministic_view()
