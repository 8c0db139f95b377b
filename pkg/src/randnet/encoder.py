"""Unrolled FISTA encoder.

Given compressed data r, a dictionary A and a measurement matrix Phi, the
encoder runs T iterations of FISTA on

    F(x) = 1/2 ||r - Phi A x||^2 + lam ||x||_1

starting from x_0 = x_{-1} = 0::

    s_t = (1 + sqrt(1 + 4 s_{t-1}^2)) / 2,                 s_0 = 0
    w_t = x_{t-1} + ((s_{t-1} - 1) / s_t) (x_{t-1} - x_{t-2})
    c_t = w_t + (1/L) A^T Phi^T (r - Phi A w_t)
    x_t = soft_threshold(c_t, lam / L)

Two implementations share these iterates. :func:`fista_encode` handles one
example with chained operator applications and can keep the full trace.
:func:`encode_batch` handles many examples, possibly compressed by
different per-block matrices, through the small p x p Gram matrix of each
block; the training loops use it.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DivergenceError
from .measurement import ChainedOperator


def soft_threshold(c, eps):
    """Two-sided ReLU: sign(c) * max(|c| - eps, 0), element-wise."""
    if eps < 0:
        raise ValueError("threshold must be non-negative")
    c = np.asarray(c)
    return np.sign(c) * np.maximum(np.abs(c) - eps, 0.0)


def momentum_sequence(T):
    """s_0 = 0 followed by T applications of the FISTA momentum recurrence."""
    if T < 0:
        raise ValueError("T must be >= 0")
    s = np.zeros(T + 1)
    for t in range(1, T + 1):
        s[t] = (1.0 + np.sqrt(1.0 + 4.0 * s[t - 1] ** 2)) / 2.0
    return s


def extrapolation_weights(T):
    """mu_t = (s_{t-1} - 1) / s_t for t = 1..T (index 0 unused, set to 0)."""
    s = momentum_sequence(T)
    mu = np.zeros(T + 1)
    mu[1:] = (s[:-1] - 1.0) / s[1:]
    return mu


def lasso_objective(x, r, A, phi, lam):
    resid = r - ChainedOperator(phi, A).forward(x)
    return 0.5 * float(resid @ resid) + lam * float(np.abs(x).sum())


@dataclass
class EncoderTrace:
    """Every FISTA intermediate needed to differentiate through the encoder.

    ``x[t]`` holds x_t for t = 0..T (x_0 = 0); ``w[t-1]`` and ``c[t-1]``
    hold w_t and c_t for t = 1..T.
    """

    T: int
    s: np.ndarray
    w: np.ndarray
    c: np.ndarray
    x: np.ndarray
    lam: float
    L: float

    @property
    def eps(self):
        return self.lam / self.L

    @property
    def x_T(self):
        return self.x[self.T]

    def z(self, t):
        """State pair (x_t, x_{t-1}) with x_{-1} = 0."""
        prev = self.x[t - 1] if t >= 1 else np.zeros_like(self.x[0])
        return self.x[t], prev

    def active(self, t):
        """Thresholding pattern |c_t| > eps for t = 1..T."""
        return np.abs(self.c[t - 1]) > self.eps


def _check_encode_args(lam, L, T):
    if L <= 0:
        raise ValueError("L must be positive")
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    if T < 1:
        raise ValueError("T must be >= 1")


def fista_encode(r, A, phi, lam, L, T, keep_trace=False, dtype=np.float64):
    """Run T FISTA iterations for one example.

    Returns ``(x_T, trace)``; ``trace`` is ``None`` unless ``keep_trace``.
    Raises :class:`DivergenceError` naming the iteration at which a
    non-finite value first appears (typically L is too small).
    """
    _check_encode_args(lam, L, T)
    r = np.asarray(r, dtype=dtype)
    A = np.asarray(A, dtype=dtype)
    if r.shape != (phi.M,):
        raise DimensionError(f"r must have shape ({phi.M},), got {r.shape}")
    op = ChainedOperator(phi, A)
    p = op.p
    eps = lam / L
    inv_L = 1.0 / L
    s = momentum_sequence(T)
    mu = extrapolation_weights(T)
    x_prev = np.zeros(p, dtype=dtype)
    x = np.zeros(p, dtype=dtype)
    if keep_trace:
        W = np.empty((T, p), dtype=dtype)
        C = np.empty((T, p), dtype=dtype)
        X = np.zeros((T + 1, p), dtype=dtype)
    for t in range(1, T + 1):
        w = x + mu[t] * (x - x_prev)
        c = w + inv_L * op.adjoint(r - op.forward(w))
        if not np.all(np.isfinite(c)):
            raise DivergenceError(f"non-finite encoder state at iteration {t}", iteration=t)
        x_prev, x = x, soft_threshold(c, eps)
        if keep_trace:
            W[t - 1], C[t - 1], X[t] = w, c, x
    trace = EncoderTrace(T, s, W, C, X, lam, L) if keep_trace else None
    return x, trace


class BlockGram:
    """Per-block operators for a batch of examples.

    For every distinct block b in the batch this holds B_b = Phi_b A
    (M x p) and G_b = B_b^T B_b (p x p), plus h_j = B_b^T r_j per example.
    One FISTA step then costs O(p^2) per example regardless of N.
    """

    _STACK_LIMIT = 4_000_000

    def __init__(self, A, phis, blocks, R):
        blocks = np.asarray(blocks)
        R = np.asarray(R)
        self.n = len(blocks)
        self.uniq, self.inv = np.unique(blocks, return_inverse=True)
        self.phis = [phis[b] for b in self.uniq]
        self.B = [ChainedOperator(phi, A).compose() for phi in self.phis]
        self.G = np.stack([Bb.T @ Bb for Bb in self.B])
        self.groups = [np.flatnonzero(self.inv == u) for u in range(len(self.uniq))]
        self.p = A.shape[1]
        self.H = np.empty((self.n, self.p))
        for u, idx in enumerate(self.groups):
            self.H[idx] = R[idx] @ self.B[u]
        self._stacked = None
        if len(self.uniq) > 1 and self.n * self.p * self.p <= self._STACK_LIMIT:
            self._stacked = self.G[self.inv]

    def apply(self, W):
        """Row-wise G_{b_j} w_j for W of shape (n, p)."""
        if len(self.uniq) == 1:
            return W @ self.G[0]
        if self._stacked is not None:
            return np.matmul(self._stacked, W[:, :, None])[:, :, 0]
        out = np.empty_like(W)
        for u, idx in enumerate(self.groups):
            out[idx] = W[idx] @ self.G[u]
        return out

    def decode(self, X):
        """Row-wise Phi_{b_j} A x_j, shape (n, M)."""
        out = np.empty((self.n, self.B[0].shape[0]))
        for u, idx in enumerate(self.groups):
            out[idx] = X[idx] @ self.B[u].T
        return out


@dataclass
class BatchTrace:
    w: np.ndarray   # (T, n, p)
    c: np.ndarray   # (T, n, p)
    x_T: np.ndarray  # (n, p)
    mu: np.ndarray
    lam: float
    L: float
    gram: BlockGram

    @property
    def T(self):
        return self.w.shape[0]


def encode_batch(R, A, phis, blocks, lam, L, T, keep_trace=False, gram=None):
    """FISTA on every row of ``R`` (shape (n, M)); row j was compressed by ``phis[blocks[j]]``.

    Produces the same iterates as :func:`fista_encode` up to floating-point
    reassociation. Returns ``(X_T, trace_or_None)``.
    """
    _check_encode_args(lam, L, T)
    R = np.asarray(R, dtype=float)
    if gram is None:
        gram = BlockGram(A, phis, blocks, R)
    n, p = gram.n, gram.p
    eps = lam / L
    inv_L = 1.0 / L
    mu = extrapolation_weights(T)
    x_prev = np.zeros((n, p))
    x = np.zeros((n, p))
    if keep_trace:
        Wt = np.empty((T, n, p))
        Ct = np.empty((T, n, p))
    for t in range(1, T + 1):
        w = x + mu[t] * (x - x_prev)
        c = w + inv_L * (gram.H - gram.apply(w))
        x_prev, x = x, soft_threshold(c, eps)
        if keep_trace:
            Wt[t - 1], Ct[t - 1] = w, c
    if not np.all(np.isfinite(x)):
        raise DivergenceError("non-finite codes after batch encoding", iteration=T)
    trace = BatchTrace(Wt, Ct, x, mu, lam, L, gram) if keep_trace else None
    return x, trace


def encode_dataset(ds, A, lam, L, T, chunk=1024, threads=1):
    """Codes for every example of a compressed :class:`~randnet.data.Dataset`, in index order."""
    phis = ds.phis()
    starts = range(0, ds.J, chunk)

    def run(start):
        sl = slice(start, min(start + chunk, ds.J))
        return encode_batch(ds.compressed[sl], A, phis, ds.blocks[sl], lam, L, T)[0]

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(run, starts))
    else:
        parts = [run(s0) for s0 in starts]
    return np.concatenate(parts, axis=0) if parts else np.zeros((0, A.shape[1]))
