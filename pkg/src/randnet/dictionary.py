"""The trainable dictionary: an N x p array with unit-norm columns.

Dictionaries are plain float arrays throughout the package; this module
holds the constraint projection, the step-size bound used by FISTA and the
on-disk checkpoint format.

Checkpoint layout (little-endian)::

    uint32 N | uint32 p | N*p float64 values in column-major order

so that the payload is the stacked-column vector ``[a_1; a_2; ...; a_p]``.
"""

import struct
import warnings

import numpy as np

from .errors import DegenerateDictionaryError, DimensionError, TruncatedFileError
from .measurement import ChainedOperator
from .rng import make_rng

_NORM_FLOOR = 1e-12
_HEADER = struct.Struct("<II")


class LipschitzWarning(RuntimeWarning):
    pass


def normalize_columns(A):
    """Return a copy of ``A`` with every column scaled to unit l2 norm."""
    A = np.asarray(A, dtype=float)
    norms = np.linalg.norm(A, axis=0)
    bad = np.flatnonzero(norms <= _NORM_FLOOR)
    if bad.size:
        raise DegenerateDictionaryError(f"columns {bad.tolist()} have near-zero norm")
    return A / norms


def init_dictionary(N, p, seed):
    """Gaussian N(0, 1/N) entries followed by column normalization."""
    rng = make_rng(seed)
    return normalize_columns(rng.standard_normal((N, p)) / np.sqrt(N))


def estimate_lipschitz(A, phi, iters=200, tol=1e-6, safety=1.1, seed=0, return_converged=False):
    """Power-iteration estimate of the largest eigenvalue of A^T Phi^T Phi A, times ``safety``.

    The Gram matrix is never formed; each iteration applies Phi A and its
    adjoint. When the relative change has not dropped below ``tol`` after
    ``iters`` steps the best estimate is still returned and a
    :class:`LipschitzWarning` is emitted (``return_converged=True`` also
    returns the flag).
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if safety < 1:
        raise ValueError("safety must be >= 1")
    op = ChainedOperator(phi, A)
    v = make_rng(seed).standard_normal(op.p)
    v /= np.linalg.norm(v)
    est = 0.0
    converged = False
    for _ in range(iters):
        u = op.adjoint(op.forward(v))
        new = float(v @ u)
        nrm = np.linalg.norm(u)
        if nrm == 0.0:
            est, converged = 0.0, True
            break
        v = u / nrm
        if abs(new - est) <= tol * max(abs(new), 1e-30):
            est, converged = new, True
            break
        est = new
    if not converged:
        warnings.warn(f"power iteration did not reach tol={tol} in {iters} steps", LipschitzWarning)
    value = safety * est
    return (value, converged) if return_converged else value


def estimate_lipschitz_blocks(A, phis, **kwargs):
    """Largest per-block estimate, so one step size is valid for every block."""
    return max(estimate_lipschitz(A, phi, **kwargs) for phi in phis)


def save_dictionary(path, A):
    A = np.asarray(A, dtype="<f8")
    N, p = A.shape
    with open(path, "wb") as f:
        f.write(_HEADER.pack(N, p))
        f.write(A.tobytes(order="F"))


def load_dictionary(path):
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < _HEADER.size:
        raise TruncatedFileError(f"{path}: missing header")
    N, p = _HEADER.unpack_from(blob)
    payload = blob[_HEADER.size:]
    if len(payload) != 8 * N * p:
        raise TruncatedFileError(f"{path}: expected {8 * N * p} payload bytes, found {len(payload)}")
    # C order so reductions round the same way as on the in-memory original
    return np.ascontiguousarray(np.frombuffer(payload, dtype="<f8").reshape((N, p), order="F"), dtype=np.float64)


def check_shape(A, N=None, p=None):
    if A.ndim != 2 or (N is not None and A.shape[0] != N) or (p is not None and A.shape[1] != p):
        raise DimensionError(f"dictionary shape {A.shape} does not match ({N}, {p})")
