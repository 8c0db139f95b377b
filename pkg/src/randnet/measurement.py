"""Random measurement operators and their adjoints.

Three kinds are supported:

``identity``
    The uncompressed case (M = N); keeps the plain tied auto-encoder on the
    same code path as the compressed one.
``gaussian``
    Dense i.i.d. zero-mean Gaussian entries, variance ``1/M`` by default.
``row_sparse``
    Every row holds exactly ``s`` entries equal to +1 or -1 at distinct,
    uniformly drawn columns. Stored as per-row (column, sign) lists, i.e. a
    CSR matrix whose values are all +-1.

A matrix is fully determined by ``(kind, M, N, s, seed)`` and is persisted
as exactly those five fields; the dense array is never written to disk.
"""

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import DimensionError, SparsityError
from .rng import make_rng

IDENTITY = "identity"
GAUSSIAN = "gaussian"
ROW_SPARSE = "row_sparse"
KINDS = (IDENTITY, GAUSSIAN, ROW_SPARSE)

# Gaussian entry variance policies: 1/M keeps E||Phi y||^2 = ||y||^2.
_VARIANCE = {"rows": lambda M, N: 1.0 / M, "cols": lambda M, N: 1.0 / N, "unit": lambda M, N: 1.0}


@dataclass(eq=False)
class MeasurementMatrix:
    kind: str
    M: int
    N: int
    seed: int = 0
    s: int = 0
    variance: str = "rows"
    dense_values: np.ndarray = field(default=None, repr=False)
    indices: np.ndarray = field(default=None, repr=False)
    signs: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self._csr = None
        self._csr_t = None

    @property
    def beta(self):
        return self.M / self.N

    @property
    def gamma(self):
        """Compression factor beta * s for row-sparse matrices, beta otherwise."""
        return self.beta * self.s if self.kind == ROW_SPARSE else self.beta

    @property
    def csr(self):
        if self._csr is None:
            if self.kind != ROW_SPARSE:
                raise TypeError("csr view only exists for row-sparse matrices")
            indptr = np.arange(0, self.M * self.s + 1, self.s)
            self._csr = sp.csr_matrix(
                (self.signs.ravel().astype(np.float64), self.indices.ravel(), indptr),
                shape=(self.M, self.N),
            )
            self._csr_t = self._csr.T.tocsr()
        return self._csr

    @property
    def nnz(self):
        if self.kind == ROW_SPARSE:
            return self.M * self.s
        if self.kind == IDENTITY:
            return self.N
        return int(np.count_nonzero(self.dense_values))

    def dense(self):
        """Materialize Phi as an M x N float64 array (tests and benchmarks only)."""
        if self.kind == IDENTITY:
            return np.eye(self.N)
        if self.kind == GAUSSIAN:
            return self.dense_values.copy()
        out = np.zeros((self.M, self.N))
        rows = np.repeat(np.arange(self.M), self.s)
        out[rows, self.indices.ravel()] = self.signs.ravel()
        return out

    def project(self, y):
        """Return Phi @ y for ``y`` of shape (N,) or (N, k)."""
        y = np.asarray(y)
        if y.shape[0] != self.N:
            raise DimensionError(f"expected leading dimension {self.N}, got {y.shape}")
        if self.kind == IDENTITY:
            return y.copy()
        if self.kind == GAUSSIAN:
            return self.dense_values @ y
        return self.csr @ y

    def adjoint(self, r):
        """Return Phi^T @ r for ``r`` of shape (M,) or (M, k)."""
        r = np.asarray(r)
        if r.shape[0] != self.M:
            raise DimensionError(f"expected leading dimension {self.M}, got {r.shape}")
        if self.kind == IDENTITY:
            return r.copy()
        if self.kind == GAUSSIAN:
            return self.dense_values.T @ r
        self.csr
        return self._csr_t @ r

    def stored_bytes(self):
        """Bytes needed to persist this matrix: five 8-byte scalars."""
        return 5 * 8

    def materialized_bytes(self):
        """Bytes held in memory by the generated storage."""
        if self.kind == GAUSSIAN:
            return self.dense_values.nbytes
        if self.kind == ROW_SPARSE:
            return self.indices.nbytes + self.signs.nbytes
        return 0

    def to_dict(self):
        return {"kind": self.kind, "M": self.M, "N": self.N, "s": self.s, "seed": int(self.seed)}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d, variance="rows"):
        if set(d) != {"kind", "M", "N", "s", "seed"}:
            raise DimensionError(f"measurement record must hold exactly kind, M, N, s, seed; got {sorted(d)}")
        return generate(d["kind"], d["M"], d["N"], s=d["s"], seed=d["seed"], variance=variance)

    @classmethod
    def from_json(cls, text, variance="rows"):
        return cls.from_dict(json.loads(text), variance=variance)

    def same_storage(self, other):
        """Byte-level equality of the generated storage."""
        if (self.kind, self.M, self.N, self.s) != (other.kind, other.M, other.N, other.s):
            return False
        if self.kind == GAUSSIAN:
            return self.dense_values.tobytes() == other.dense_values.tobytes()
        if self.kind == ROW_SPARSE:
            return (self.indices.tobytes() == other.indices.tobytes()
                    and self.signs.tobytes() == other.signs.tobytes())
        return True


def _check_dims(M, N):
    if M < 1 or N < 1 or M > N:
        raise DimensionError(f"need 1 <= M <= N, got M={M}, N={N}")


def identity(N):
    if N < 1:
        raise DimensionError(f"N must be positive, got {N}")
    return MeasurementMatrix(IDENTITY, N, N, seed=0, s=0)


def gen_gaussian(M, N, seed, variance="rows"):
    """Dense Gaussian matrix with i.i.d. N(0, v) entries, v chosen by ``variance``."""
    _check_dims(M, N)
    if variance not in _VARIANCE:
        raise ValueError(f"variance must be one of {sorted(_VARIANCE)}")
    rng = make_rng(seed)
    scale = np.sqrt(_VARIANCE[variance](M, N))
    values = rng.standard_normal((M, N)) * scale
    return MeasurementMatrix(GAUSSIAN, M, N, seed=int(seed), s=0, variance=variance, dense_values=values)


def gen_row_sparse(M, N, s, seed):
    """Row-sparse +-1 matrix; each row has ``s`` distinct columns drawn by rejection."""
    _check_dims(M, N)
    if s < 1 or s > N:
        raise SparsityError(f"need 1 <= s <= N, got s={s}, N={N}")
    rng = make_rng(seed)
    indices = rng.integers(0, N, size=(M, s))
    if s > 1:
        # redraw any row that repeats a column
        while True:
            srt = np.sort(indices, axis=1)
            bad = np.any(srt[:, 1:] == srt[:, :-1], axis=1)
            if not bad.any():
                break
            indices[bad] = rng.integers(0, N, size=(int(bad.sum()), s))
    signs = np.where(rng.random((M, s)) < 0.5, -1, 1).astype(np.int8)
    return MeasurementMatrix(ROW_SPARSE, M, N, seed=int(seed), s=int(s),
                             indices=indices.astype(np.int64), signs=signs)


def generate(kind, M, N, s=0, seed=0, variance="rows"):
    if kind == IDENTITY:
        if M != N:
            raise DimensionError("identity measurement requires M == N")
        return identity(N)
    if kind == GAUSSIAN:
        return gen_gaussian(M, N, seed, variance=variance)
    if kind == ROW_SPARSE:
        return gen_row_sparse(M, N, s, seed)
    raise ValueError(f"unknown measurement kind {kind!r}; expected one of {KINDS}")


def project(phi, y):
    return phi.project(y)


def adjoint(phi, r):
    return phi.adjoint(r)


class ChainedOperator:
    """The pair x -> Phi A x and r -> A^T Phi^T r without forming Phi A.

    For row-sparse Phi only the rows of A that Phi actually reads are
    gathered (at most sM of them), so both directions cost O(s M p) instead
    of O(N p).
    """

    def __init__(self, phi, A):
        A = np.asarray(A)
        if A.shape[0] != phi.N:
            raise DimensionError(f"dictionary has {A.shape[0]} rows, measurement expects {phi.N}")
        self.phi = phi
        self.A = A
        self.p = A.shape[1]
        if phi.kind == ROW_SPARSE:
            cols, local = np.unique(phi.indices.ravel(), return_inverse=True)
            indptr = np.arange(0, phi.M * phi.s + 1, phi.s)
            self._sub = sp.csr_matrix(
                (phi.signs.ravel().astype(A.dtype), local.ravel(), indptr),
                shape=(phi.M, cols.size),
            )
            self._sub_t = self._sub.T.tocsr()
            self._A_sub = A[cols]
            self._cols = cols

    def forward(self, x):
        """Phi A x for x of shape (p,) or (p, k)."""
        if self.phi.kind == ROW_SPARSE:
            return self._sub @ (self._A_sub @ x)
        if self.phi.kind == IDENTITY:
            return self.A @ x
        return self.phi.dense_values @ (self.A @ x)

    def adjoint(self, r):
        """A^T Phi^T r for r of shape (M,) or (M, k)."""
        if self.phi.kind == ROW_SPARSE:
            return self._A_sub.T @ (self._sub_t @ r)
        if self.phi.kind == IDENTITY:
            return self.A.T @ r
        return self.A.T @ (self.phi.dense_values.T @ r)

    def compose(self):
        """Materialized M x p product (batched training path only)."""
        if self.phi.kind == ROW_SPARSE:
            return np.asarray(self._sub @ self._A_sub)
        if self.phi.kind == IDENTITY:
            return self.A.copy()
        return self.phi.dense_values @ self.A
