"""Alternating-minimization dictionary learning, the classical comparison point.

Each round codes every example with FISTA under the current dictionary,
then refits the dictionary to those codes by damped least squares and
renormalizes its columns. The compressed variant fits

    sum_j 1/2 ||r_j - Phi_{b_j} A x_j||^2

instead, whose normal equations couple all columns through the per-block
Phi_b^T Phi_b; they are solved matrix-free by conjugate gradients.
"""

import logging
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.sparse.linalg import LinearOperator, cg

from .dictionary import estimate_lipschitz_blocks, normalize_columns
from .encoder import encode_batch
from .errors import ConsistencyError, RankError
from .measurement import identity
from .train import EpochRecord, TrainHistory, dict_error

log = logging.getLogger(__name__)

LEAST_SQUARES_NORMALIZE = "least_squares_normalize"


@dataclass
class AltMinConfig:
    outer_iters: int = 10
    lam: float = 0.25
    T: int = 400
    L: object = "estimate"
    method: str = LEAST_SQUARES_NORMALIZE
    compressed: bool = False
    damping: float = 1e-8
    cg_tol: float = 1e-10
    cg_maxiter: int = 2000
    safety: float = 1.1

    def __post_init__(self):
        if self.outer_iters < 0:
            raise ValueError("outer_iters must be non-negative")
        if self.method != LEAST_SQUARES_NORMALIZE:
            raise ValueError(f"unknown dictionary update {self.method!r}")
        if self.lam < 0 or self.T < 1 or self.damping < 0:
            raise ValueError("need lam >= 0, T >= 1, damping >= 0")


@dataclass
class AltMinHistory(TrainHistory):
    # per round: objective after coding, after the least-squares fit, after normalization
    stages: list = field(default_factory=list)


def _problem(ds, compressed):
    """(data rows, per-block operators, block index per row) for either objective."""
    if compressed:
        if ds.compressed is None:
            raise ConsistencyError("dataset has no compressed measurements")
        return ds.compressed, ds.phis(), ds.blocks
    if ds.examples is None:
        raise ConsistencyError("uncompressed objective needs the original examples")
    return ds.examples, [identity(ds.examples.shape[1])], np.zeros(ds.examples.shape[0], dtype=int)


def sparse_coding_step(ds, A, lam, L, T, compressed=False, chunk=1024):
    """FISTA codes for every example, against y (or r with its block Phi when ``compressed``)."""
    Y, phis, blocks = _problem(ds, compressed)
    if L == "estimate":
        L = estimate_lipschitz_blocks(A, phis, iters=1000)
    parts = []
    for start in range(0, len(Y), chunk):
        sl = slice(start, start + chunk)
        parts.append(encode_batch(Y[sl], A, phis, blocks[sl], lam, L, T)[0])
    return np.concatenate(parts) if parts else np.zeros((0, A.shape[1]))


def objective(ds, A, codes, lam, compressed=False):
    """sum_j 1/2 ||y_j - A x_j||^2 + lam ||x_j||_1 (compressed: r_j and Phi_{b_j} A)."""
    Y, phis, blocks = _problem(ds, compressed)
    total = lam * float(np.abs(codes).sum())
    for b in np.unique(blocks):
        idx = blocks == b
        resid = Y[idx] - phis[b].project(A @ codes[idx].T).T
        total += 0.5 * float(np.sum(resid * resid))
    return total


def _keep_dead(A_new, codes, A_prev):
    dead = ~np.any(codes != 0, axis=0)
    if np.any(dead):
        if A_prev is None:
            raise RankError(f"atoms {np.flatnonzero(dead).tolist()} unused and no previous dictionary given")
        log.info("dead atoms left unchanged: %s", np.flatnonzero(dead).tolist())
        A_new[:, dead] = A_prev[:, dead]
    return A_new


def least_squares_dictionary(ds, codes, compressed=False, damping=1e-8, A_prev=None,
                             cg_tol=1e-10, cg_maxiter=2000):
    """Unconstrained minimizer of the quadratic data term over A (before normalization)."""
    Y, phis, blocks = _problem(ds, compressed)
    p = codes.shape[1]
    if not compressed:
        gram = codes.T @ codes + damping * np.eye(p)
        try:
            factor = scipy.linalg.cho_factor(gram)
        except np.linalg.LinAlgError as exc:
            raise RankError("code Gram matrix is singular even after damping") from exc
        # A G = Y^T X  =>  A = (G^{-1} X^T Y)^T
        return scipy.linalg.cho_solve(factor, codes.T @ Y).T
    N = phis[0].N
    per_block = []
    rhs = np.zeros((N, p))
    for b in np.unique(blocks):
        idx = blocks == b
        Xb = codes[idx]
        per_block.append((phis[b], Xb.T @ Xb))
        rhs += phis[b].adjoint(Y[idx].T) @ Xb

    def apply(vec):
        A = vec.reshape(N, p)
        out = damping * A
        for phi, S in per_block:
            out = out + phi.adjoint(phi.project(A)) @ S
        return out.ravel()

    op = LinearOperator((N * p, N * p), matvec=apply, dtype=float)
    x0 = None if A_prev is None else np.asarray(A_prev, dtype=float).ravel()
    sol, info = cg(op, rhs.ravel(), x0=x0, rtol=cg_tol, atol=0.0, maxiter=cg_maxiter)
    if info > 0:
        warnings.warn(f"CG stopped after {info} iterations without reaching rtol={cg_tol}", RuntimeWarning)
    elif info < 0:
        raise RankError("CG breakdown in the compressed dictionary update")
    return sol.reshape(N, p)


def dictionary_update_step(ds, codes, compressed=False, damping=1e-8, A_prev=None, **cg_kw):
    """Least-squares refit followed by column normalization.

    Atoms that no example uses are left as they were in ``A_prev``.
    """
    A_ls = least_squares_dictionary(ds, codes, compressed, damping, A_prev, **cg_kw)
    return normalize_columns(_keep_dead(A_ls, codes, A_prev))


def alternating_minimization(ds, A0, cfg, A_true=None):
    """``cfg.outer_iters`` rounds of coding then refitting; returns (A, AltMinHistory)."""
    A = normalize_columns(A0)
    if A_true is None:
        A_true = ds.true_dictionary
    history = AltMinHistory()
    _, phis, _ = _problem(ds, cfg.compressed)
    for rnd in range(1, cfg.outer_iters + 1):
        t0 = time.perf_counter()
        if cfg.L == "estimate":
            L = estimate_lipschitz_blocks(A, phis, safety=cfg.safety, iters=1000)
        else:
            L = float(cfg.L)
        X = sparse_coding_step(ds, A, cfg.lam, L, cfg.T, compressed=cfg.compressed)
        f_code = objective(ds, A, X, cfg.lam, cfg.compressed)
        A_ls = _keep_dead(least_squares_dictionary(ds, X, cfg.compressed, cfg.damping, A,
                                                   cfg.cg_tol, cfg.cg_maxiter), X, A)
        f_ls = objective(ds, A_ls, X, cfg.lam, cfg.compressed)
        A = normalize_columns(A_ls)
        f_norm = objective(ds, A, X, cfg.lam, cfg.compressed)
        history.stages.append({"round": rnd, "after_coding": f_code, "after_update": f_ls,
                               "after_normalize": f_norm})
        history.append(EpochRecord(rnd, f_norm / len(X),
                                   err=dict_error(A_true, A) if A_true is not None else None,
                                   seconds=time.perf_counter() - t0))
    return A, history
