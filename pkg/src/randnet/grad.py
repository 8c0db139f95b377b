"""Hand-written reverse-mode gradients through the unrolled encoder.

Unsupervised loss: 1/2 ||r - Phi A x_T||^2 with x_T produced by T FISTA
iterations that all use the same A. Writing g_t for the gradient flowing
into the pre-threshold value c_t (zero wherever |c_t| <= lam/L), each
iteration contributes

    (1/L) Phi^T [ (r - Phi A w_t) g_t^T - (Phi A g_t) w_t^T ]

to dL/dA, the decoder contributes Phi^T (r_hat - r) x_T^T, and the gradient
reaching the previous states is g_t - (1/L) A^T Phi^T Phi A g_t, split
between x_{t-1} and x_{t-2} by the extrapolation weights. Everything is
accumulated in the M x p measurement space and pulled back by a single
Phi^T at the end.

Stacked-vector convention: ``GradientBundle.delta_a`` is stored as an
N x p array; ``stacked_a()`` returns its columns stacked into an Np-vector
(column-major ravel), matching a = [a_1; a_2; ...; a_p]. Same for delta_c.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConsistencyError
from .encoder import fista_encode
from .measurement import ChainedOperator, generate, identity
from .model import ClassifierParams, ce_loss, classify
from .rng import make_rng


@dataclass
class GradientBundle:
    delta_a: np.ndarray
    delta_c: np.ndarray
    delta_d: np.ndarray
    loss_value: float

    def stacked_a(self):
        return self.delta_a.ravel(order="F")

    def stacked_c(self):
        return self.delta_c.ravel(order="F")

    def is_finite(self):
        return all(np.all(np.isfinite(v)) for v in (self.delta_a, self.delta_c, self.delta_d))


def _check_trace(trace, r, A, phi):
    if trace.x.shape[1] != A.shape[1] or r.shape != (phi.M,) or A.shape[0] != phi.N:
        raise ConsistencyError("trace, data, dictionary and measurement shapes disagree")
    # w_1 = 0, so c_1 = (1/L) A^T Phi^T r pins the trace to these inputs
    c1 = ChainedOperator(phi, A).adjoint(r) / trace.L
    if not np.allclose(trace.c[0], c1, rtol=1e-9, atol=1e-12 * (1 + np.abs(c1).max())):
        raise ConsistencyError("trace was not produced from this (r, A, Phi)")


def backprop_unsupervised(trace, r, A, phi, return_contributions=False):
    """Gradient of 1/2 ||r - Phi A x_T||^2 with respect to A.

    With ``return_contributions`` the per-stage pieces are also returned as
    a list ``[decoder, iteration T, ..., iteration 1]`` of N x p arrays that
    sum to ``delta_a``.
    """
    r = np.asarray(r, dtype=float)
    A = np.asarray(A, dtype=float)
    _check_trace(trace, r, A, phi)
    op = ChainedOperator(phi, A)
    inv_L = 1.0 / trace.L
    mu = np.zeros(trace.T + 1)
    mu[1:] = (trace.s[:-1] - 1.0) / trace.s[1:]

    x_T = trace.x_T
    g_r = op.forward(x_T) - r
    loss = 0.5 * float(g_r @ g_r)
    Q = np.outer(g_r, x_T)
    pieces = [Q.copy()] if return_contributions else None

    g_cur = op.adjoint(g_r)          # dL/dx_t, complete when t is reached
    g_next = np.zeros_like(g_cur)    # partial dL/dx_{t-1}
    for t in range(trace.T, 0, -1):
        g_c = g_cur * trace.active(t)
        if g_c.any():
            w = trace.w[t - 1]
            Ag = op.forward(g_c)
            Qt = inv_L * (np.outer(r - op.forward(w), g_c) - np.outer(Ag, w))
            Q += Qt
            g_w = g_c - inv_L * op.adjoint(Ag)
        else:
            Qt = None
            g_w = np.zeros_like(g_c)
        if return_contributions:
            pieces.append(Qt if Qt is not None else np.zeros_like(Q))
        g_cur, g_next = g_next + (1.0 + mu[t]) * g_w, -mu[t] * g_w

    bundle = GradientBundle(phi.adjoint(Q), np.zeros((0, A.shape[1])), np.zeros(0), loss)
    if return_contributions:
        return bundle, [phi.adjoint(P) for P in pieces]
    return bundle


def backprop_classifier(x_T, u, params):
    """Softmax cross-entropy gradients for C and d.

    Accepts a single example (x_T of shape (p,), u of shape (K,)) or a batch
    of rows; batch gradients are summed.
    """
    x_T = np.asarray(x_T, dtype=float)
    u = np.asarray(u, dtype=float)
    u_hat = classify(x_T, params)
    g_q = u_hat - u
    # for one-hot rows, u_hat_c - 1 cancels badly near saturation; use -sum_{k != c} u_hat_k
    hot = u == 1.0
    if np.all(hot.sum(axis=-1) == 1):
        g_q[hot] = -np.sum(np.where(hot, 0.0, u_hat), axis=-1)
    if x_T.ndim == 1:
        delta_c = np.outer(g_q, x_T)
        delta_d = g_q
    else:
        delta_c = g_q.T @ x_T
        delta_d = g_q.sum(axis=0)
    return GradientBundle(np.zeros((0, x_T.shape[-1])), delta_c, delta_d, ce_loss(u_hat, u))


def batch_backprop_unsupervised(trace, R):
    """Summed dL/dA and loss for a batch encoded by :func:`~randnet.encoder.encode_batch`.

    Uses the block Gram form: with B_b = Phi_b A, G_b = B_b^T B_b and
    h_j = B_b^T r_j, the per-block gradient pieces in measurement space are
    pulled back through Phi_b^T once per block.
    """
    R = np.asarray(R, dtype=float)
    gram = trace.gram
    X = trace.x_T
    inv_L = 1.0 / trace.L
    mu = trace.mu
    T = trace.T

    G_r = gram.decode(X) - R
    loss = 0.5 * float(np.sum(G_r * G_r))
    g_cur = np.empty_like(X)
    for u, idx in enumerate(gram.groups):
        g_cur[idx] = G_r[idx] @ gram.B[u]
    g_next = np.zeros_like(X)
    Gc = np.zeros_like(trace.c)
    eps = trace.lam / trace.L
    for t in range(T, 0, -1):
        g_c = g_cur * (np.abs(trace.c[t - 1]) > eps)
        Gc[t - 1] = g_c
        g_w = g_c - inv_L * gram.apply(g_c)
        g_cur, g_next = g_next + (1.0 + mu[t]) * g_w, -mu[t] * g_w

    g_h = Gc.sum(axis=0) * inv_L
    p = X.shape[1]
    dA = None
    for u, idx in enumerate(gram.groups):
        S = -inv_L * (Gc[:, idx].reshape(-1, p).T @ trace.w[:, idx].reshape(-1, p))
        Q = G_r[idx].T @ X[idx] + R[idx].T @ g_h[idx] + gram.B[u] @ (S + S.T)
        part = gram.phis[u].adjoint(Q)
        dA = part if dA is None else dA + part
    return dA, loss


@dataclass
class FiniteDiffReport:
    max_rel_error: float
    checked: int
    excluded: int
    numeric: np.ndarray

    def __float__(self):
        return float(self.max_rel_error)


def finite_diff_check(theta, loss_fn, grad, h=1e-6, pattern_fn=None):
    """Compare an analytic gradient with central differences.

    For each coordinate i the numeric derivative is
    (loss(theta + h e_i) - loss(theta - h e_i)) / 2h and the error is
    |analytic - numeric| / (|analytic| + |numeric| + 1e-12). When
    ``pattern_fn`` is given, coordinates whose +-h perturbation changes the
    returned thresholding pattern straddle a kink and are excluded.

    ``theta`` keeps its dtype: an ``np.longdouble`` vector, or an object
    array of ``mpmath.mpf``, together with a loss evaluated in the same
    precision keeps the cancellation error of the difference quotient far
    below the tolerances used in the test-suite.
    """
    theta = np.asarray(theta)
    if theta.dtype != object and not np.issubdtype(theta.dtype, np.floating):
        theta = theta.astype(float)
    theta = theta.ravel()
    grad = np.asarray(grad, dtype=float).ravel()
    if grad.shape != theta.shape:
        raise ConsistencyError("gradient and parameter vector differ in length")
    base = pattern_fn(theta) if pattern_fn is not None else None
    numeric = np.full(theta.size, np.nan)
    worst = 0.0
    excluded = 0
    for i in range(theta.size):
        tp = theta.copy()
        tp[i] += h
        tm = theta.copy()
        tm[i] -= h
        if pattern_fn is not None:
            if not (np.array_equal(pattern_fn(tp), base) and np.array_equal(pattern_fn(tm), base)):
                excluded += 1
                continue
        numeric[i] = float((loss_fn(tp) - loss_fn(tm)) / (2.0 * h))
        err = abs(grad[i] - numeric[i]) / (abs(grad[i]) + abs(numeric[i]) + 1e-12)
        worst = max(worst, err)
    return FiniteDiffReport(worst, theta.size - excluded, excluded, numeric)


def _reference_forward(r, A, Phi, lam, L, T):
    """Dense textbook FISTA in the dtype of ``A``; returns (x_T, all c_t)."""
    dt = A.dtype.type
    B = Phi @ A
    s_prev = dt(0)
    x = x_prev = np.zeros(A.shape[1], dtype=A.dtype)
    cs = []
    eps = dt(lam) / dt(L)
    for _ in range(T):
        s = (1 + np.sqrt(1 + 4 * s_prev * s_prev)) / 2
        w = x + ((s_prev - 1) / s) * (x - x_prev)
        c = w + (B.T @ (r - B @ w)) / dt(L)
        x_prev, x = x, np.sign(c) * np.maximum(np.abs(c) - eps, 0)
        cs.append(c)
        s_prev = s
    return x, np.array(cs)


def unsupervised_problem(r, phi, lam, L, T, shape, dtype=np.longdouble):
    """Loss and thresholding-pattern closures of the column-stacked dictionary.

    Both run an independent dense forward pass in ``dtype`` (extended
    precision by default) and serve as the finite-difference oracle.
    """
    N, p = shape
    Phi = phi.dense().astype(dtype)
    r = np.asarray(r).astype(dtype)

    def unpack(theta):
        return np.asarray(theta, dtype=dtype).reshape((N, p), order="F")

    def loss(theta):
        A = unpack(theta)
        x_T, _ = _reference_forward(r, A, Phi, lam, L, T)
        resid = r - Phi @ (A @ x_T)
        return resid @ resid / 2

    def pattern(theta):
        _, cs = _reference_forward(r, unpack(theta), Phi, lam, L, T)
        return np.abs(cs) > dtype(lam) / dtype(L)

    return loss, pattern


def random_instance(seed, kind, N=12, p=4, M=6, T=5, lam=0.3, s=2):
    """A small random encoder problem for gradient checking.

    Returns ``(r, A, phi, lam, L, T)`` with L = 1.1 x the largest eigenvalue
    of A^T Phi^T Phi A, computed densely.
    """
    rng = make_rng(seed)
    if kind == "identity":
        phi = identity(N)
    else:
        phi = generate(kind, M, N, s=min(s, N), seed=int(rng.integers(2**63)))
    A = rng.standard_normal((N, p))
    A /= np.linalg.norm(A, axis=0)
    x = np.zeros(p)
    k = max(1, p // 2)
    x[rng.choice(p, k, replace=False)] = rng.uniform(1.0, 2.0, k) * rng.choice([-1, 1], k)
    y = A @ x + 0.1 * rng.standard_normal(N)
    r = phi.project(y)
    B = phi.dense() @ A
    L = 1.1 * float(np.linalg.eigvalsh(B.T @ B).max())
    return r, A, phi, lam, L, T


def check_unsupervised(seed, kind, h=1e-6, **kw):
    """Finite-difference report for one random instance (see :func:`random_instance`)."""
    r, A, phi, lam, L, T = random_instance(seed, kind, **kw)
    _, trace = fista_encode(r, A, phi, lam, L, T, keep_trace=True)
    bundle = backprop_unsupervised(trace, r, A, phi)
    loss, pattern = unsupervised_problem(r, phi, lam, L, T, A.shape)
    theta = A.ravel(order="F").astype(np.longdouble)
    return finite_diff_check(theta, loss, bundle.stacked_a(), h=h, pattern_fn=pattern)


def check_classifier(seed, K=10, p=8, h=1e-6, dps=40):
    """Finite-difference report for a random softmax head, oracle in ``dps``-digit arithmetic."""
    import mpmath

    rng = make_rng(seed)
    x = rng.standard_normal(p)
    u = np.zeros(K)
    u[rng.integers(K)] = 1.0
    C = rng.standard_normal((K, p))
    d = rng.standard_normal(K)
    bundle = backprop_classifier(x, u, ClassifierParams(C, d))
    c = int(np.argmax(u))
    ctx = mpmath.mp.clone()
    ctx.dps = dps
    theta = np.array([ctx.mpf(v) for v in np.concatenate([C.ravel(order="F"), d])], dtype=object)
    xm = [ctx.mpf(v) for v in x]

    def loss(th):
        q = [ctx.fsum(th[k + K * j] * xm[j] for j in range(p)) + th[K * p + k] for k in range(K)]
        # -log softmax_c(q) = log1p(sum_{k != c} exp(q_k - q_c))
        return ctx.log1p(ctx.fsum(ctx.exp(q[k] - q[c]) for k in range(K) if k != c))

    grad = np.concatenate([bundle.stacked_c(), bundle.delta_d])
    return finite_diff_check(theta, loss, grad, h=h)
