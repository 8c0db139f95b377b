"""Timing and memory comparison of dense Gaussian and row-sparse measurement operators."""

import csv
import io
import time
import tracemalloc

import numpy as np

from .dictionary import init_dictionary
from .encoder import fista_encode
from .measurement import GAUSSIAN, ROW_SPARSE, generate
from .rng import make_rng

COLUMNS = ("kind", "N", "p", "beta", "s", "M", "project_s", "adjoint_s", "encode_s",
           "stored_bytes", "materialized_bytes", "peak_bytes")


def best_time(fn, repeats=5, min_time=0.02):
    """Smallest per-call wall time over ``repeats`` timing rounds."""
    fn()
    loops = 1
    while True:
        t0 = time.perf_counter()
        for _ in range(loops):
            fn()
        if time.perf_counter() - t0 >= min_time or loops >= 1 << 20:
            break
        loops *= 2
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        for _ in range(loops):
            fn()
        best = min(best, (time.perf_counter() - t0) / loops)
    return best


def bench_case(kind, N, p, beta, s=1, seed=0, T=10, lam=0.1, repeats=5, A=None):
    """One row of timings for a (kind, N, p, beta, s) operator.

    ``encode_s`` is the time of a T-iteration single-example encode through
    the chained operator, the per-example cost during inference.
    """
    M = max(1, int(round(beta * N)))
    tracemalloc.start()
    phi = generate(kind, M, N, s=s if kind == ROW_SPARSE else 0, seed=seed)
    if A is None:
        A = init_dictionary(N, p, seed + 1)
    rng = make_rng(seed + 2)
    y = rng.standard_normal(N)
    r = phi.project(y)
    fista_encode(r, A, phi, lam, 1.0, T)
    peak = tracemalloc.get_traced_memory()[1]
    tracemalloc.stop()
    L = 1.1 * float(np.linalg.norm(phi.project(A), 2) ** 2) if N * p <= 4_000_000 else 10.0
    return {
        "kind": kind, "N": N, "p": p, "beta": beta, "s": s if kind == ROW_SPARSE else 0, "M": M,
        "project_s": best_time(lambda: phi.project(y), repeats),
        "adjoint_s": best_time(lambda: phi.adjoint(r), repeats),
        "encode_s": best_time(lambda: fista_encode(r, A, phi, lam, L, T), repeats),
        "stored_bytes": phi.stored_bytes(),
        "materialized_bytes": phi.materialized_bytes(),
        "peak_bytes": peak,
    }


def bench_grid(N, p, betas, s_values=(1,), seed=0, T=10, repeats=5):
    """Dense rows for every beta, row-sparse rows for every (beta, s)."""
    A = init_dictionary(N, p, seed + 1)
    rows = []
    for beta in betas:
        rows.append(bench_case(GAUSSIAN, N, p, beta, seed=seed, T=T, repeats=repeats, A=A))
        for s in s_values:
            rows.append(bench_case(ROW_SPARSE, N, p, beta, s=s, seed=seed, T=T, repeats=repeats, A=A))
    return rows


def compressed_fraction(ds):
    """Bytes of compressed measurements over bytes of the raw examples."""
    return ds.compressed.nbytes / ds.examples.nbytes


def rows_to_csv(rows, spec_hash=None, columns=COLUMNS):
    buf = io.StringIO()
    if spec_hash is not None:
        buf.write(f"# spec_sha256={spec_hash}\n")
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()
