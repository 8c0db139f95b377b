"""Reference implementations used only by the tests.

Nothing here shares code with the library beyond plain numpy.
"""

import numpy as np


def cd_lasso(B, r, lam, tol=1e-15, max_sweeps=200_000):
    """Cyclic coordinate descent on 1/2 ||r - B x||^2 + lam ||x||_1."""
    p = B.shape[1]
    x = np.zeros(p)
    col_sq = np.einsum("ij,ij->j", B, B)
    resid = r.astype(float).copy()
    for _ in range(max_sweeps):
        biggest = 0.0
        for i in range(p):
            if col_sq[i] == 0:
                continue
            rho = B[:, i] @ resid + col_sq[i] * x[i]
            new = np.sign(rho) * max(abs(rho) - lam, 0.0) / col_sq[i]
            delta = new - x[i]
            if delta != 0.0:
                resid -= delta * B[:, i]
                x[i] = new
                biggest = max(biggest, abs(delta))
        if biggest < tol:
            break
    return x


def lasso_value(B, r, x, lam):
    res = r - B @ x
    return 0.5 * float(res @ res) + lam * float(np.abs(x).sum())


def dense_row_sparse(M, N, indices, signs):
    D = np.zeros((M, N))
    for i in range(M):
        D[i, indices[i]] = signs[i]
    return D
