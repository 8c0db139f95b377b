"""Datasets: simulated sparse-coding data, MNIST IDX files, block compression.

Examples are stored as rows (shape (J, N)); compressed measurements as rows
of shape (J, M). Every example belongs to one of B contiguous blocks and
all examples in a block share one measurement matrix, regenerated on
demand from ``derive_seed(master_seed, block_offset + b)``.
"""

import gzip
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .dictionary import normalize_columns
from .errors import ConsistencyError, DimensionError, IDXFormatError, TruncatedFileError
from .measurement import IDENTITY, generate
from .model import one_hot
from .rng import derive_seed, make_rng

IDX_IMAGES_MAGIC = 0x00000803  # 2051
IDX_LABELS_MAGIC = 0x00000801  # 2049


@dataclass
class SimConfig:
    N: int = 500
    p: int = 20
    J: int = 4250
    k: int = 3
    amplitude: tuple = (4.0, 5.0)
    noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.amplitude
        if min(self.N, self.p, self.J, self.k) < 1:
            raise ValueError("N, p, J and k must be positive")
        if self.k > self.p:
            raise ValueError(f"sparsity k={self.k} exceeds code dimension p={self.p}")
        if lo > hi:
            raise ValueError("amplitude range must satisfy low <= high")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")


@dataclass
class Dataset:
    examples: np.ndarray = None        # (J, N) or None once discarded
    compressed: np.ndarray = None      # (J, M) or None before compression
    blocks: np.ndarray = None          # (J,) block index 0..B-1
    kind: str = IDENTITY
    M: int = 0
    s: int = 0
    B: int = 0
    master_seed: int = 0
    block_offset: int = 0
    variance: str = "rows"
    labels: np.ndarray = None          # (J, K) one-hot
    codes: np.ndarray = None           # (J, p) ground-truth codes (simulation)
    true_dictionary: np.ndarray = None  # (N, p) (simulation)
    N: int = 0
    _phis: list = field(default=None, repr=False, compare=False)

    @property
    def J(self):
        for arr in (self.compressed, self.examples, self.labels):
            if arr is not None:
                return arr.shape[0]
        return 0

    @property
    def block_seeds(self):
        return [block_seed(self.master_seed, self.block_offset + b) for b in range(self.B)]

    def phis(self):
        """The B per-block measurement matrices, regenerated from their seeds once and cached."""
        if self._phis is None:
            self._phis = [generate(self.kind, self.M, self.N, s=self.s, seed=sd, variance=self.variance)
                          for sd in self.block_seeds]
        return self._phis

    def take(self, idx):
        """Sub-dataset of the given example indices (block structure kept)."""
        def pick(a):
            return None if a is None else a[idx]
        return replace(self, examples=pick(self.examples), compressed=pick(self.compressed),
                       blocks=pick(self.blocks), labels=pick(self.labels), codes=pick(self.codes),
                       _phis=self._phis)

    def split(self, n_first):
        idx = np.arange(self.J)
        return self.take(idx[:n_first]), self.take(idx[n_first:])

    def manifest(self):
        return {
            "J": int(self.J), "N": int(self.N), "M": int(self.M), "B": int(self.B),
            "kind": self.kind, "s": int(self.s), "master_seed": int(self.master_seed),
            "block_offset": int(self.block_offset),
            "labeled": self.labels is not None,
            "has_ground_truth": self.true_dictionary is not None,
        }


def block_seed(master_seed, b):
    return derive_seed(master_seed, b)


def sample_dictionary(N, p, rng, normalize=True):
    """Gaussian N(0, 1/N) draw, optionally column-normalized."""
    A = rng.standard_normal((N, p)) / np.sqrt(N)
    return normalize_columns(A) if normalize else A


def simulate(cfg):
    """Draw (Dataset, true dictionary) from y = A x + v with k-sparse codes."""
    rng = make_rng(cfg.seed)
    A = sample_dictionary(cfg.N, cfg.p, rng)
    support = np.argsort(rng.random((cfg.J, cfg.p)), axis=1)[:, :cfg.k]
    lo, hi = cfg.amplitude
    mags = rng.uniform(lo, hi, (cfg.J, cfg.k))
    signs = np.where(rng.random((cfg.J, cfg.k)) < 0.5, -1.0, 1.0)
    X = np.zeros((cfg.J, cfg.p))
    np.put_along_axis(X, support, mags * signs, axis=1)
    Y = X @ A.T
    if cfg.noise > 0:
        Y = Y + cfg.noise * rng.standard_normal(Y.shape)
    ds = Dataset(examples=Y, codes=X, true_dictionary=A, N=cfg.N)
    return ds, A


def block_sizes(J, B):
    """Contiguous block sizes; the first J mod B blocks hold one extra example."""
    if B < 1 or B > J:
        raise ValueError(f"need 1 <= B <= J, got B={B}, J={J}")
    base, extra = divmod(J, B)
    return np.array([base + 1] * extra + [base] * (B - extra))


def block_assignment(J, B):
    return np.repeat(np.arange(B), block_sizes(J, B))


def partition_and_compress(ds, B, kind, M, s=1, master_seed=0, keep_examples=True,
                           block_offset=0, variance="rows"):
    """Split ``ds`` into B contiguous blocks and compress block b with its own seeded matrix.

    ``block_offset`` shifts the block indices fed to the seed hash, so a
    held-out set compressed with a different offset gets fresh matrices
    from the same master seed.
    """
    if ds.examples is None:
        raise ConsistencyError("dataset has no uncompressed examples to project")
    J, N = ds.examples.shape
    if kind == IDENTITY:
        M, s = N, 0
    if kind != "row_sparse":
        s = 0
    blocks = block_assignment(J, B)
    out = replace(ds, blocks=blocks, kind=kind, M=int(M), s=int(s), B=int(B),
                  master_seed=int(master_seed), block_offset=int(block_offset),
                  variance=variance, N=N, _phis=None)
    phis = out.phis()
    R = np.empty((J, M))
    for b, phi in enumerate(phis):
        idx = blocks == b
        R[idx] = phi.project(ds.examples[idx].T).T
    out.compressed = R
    if not keep_examples:
        out.examples = None
    return out


def _open(path):
    path = str(path)
    return gzip.open(path, "rb") if path.endswith(".gz") else open(path, "rb")


def _read_idx(path, magic, ndim):
    with _open(path) as f:
        blob = f.read()
    if len(blob) < 4:
        raise TruncatedFileError(f"{path}: file shorter than the IDX magic number")
    got = struct.unpack_from(">I", blob)[0]
    if got != magic:
        raise IDXFormatError(f"{path}: bad magic 0x{got:08x}, expected 0x{magic:08x}")
    header = 4 + 4 * ndim
    if len(blob) < header:
        raise TruncatedFileError(f"{path}: file shorter than its IDX header")
    dims = struct.unpack_from(f">{ndim}I", blob, 4)
    need = int(np.prod(dims))
    if len(blob) - header < need:
        raise TruncatedFileError(f"{path}: expected {need} data bytes, found {len(blob) - header}")
    return np.frombuffer(blob, dtype=np.uint8, count=need, offset=header).reshape(dims)


def _scale(images, scaling):
    x = images.reshape(images.shape[0], -1).astype(np.float64)
    if scaling == "unit":
        return x / 255.0
    if scaling == "none":
        return x
    if scaling == "standardize":
        mu = x.mean(axis=1, keepdims=True)
        sd = x.std(axis=1, keepdims=True)
        return (x - mu) / np.where(sd > 0, sd, 1.0)
    raise ValueError(f"unknown scaling {scaling!r}")


def load_mnist_idx(images_path, labels_path, scaling="unit", K=10):
    """Read an IDX image/label pair into a Dataset of row-major 784-vectors."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise ConsistencyError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    if labels.size and labels.max() >= K:
        raise IDXFormatError(f"label {labels.max()} outside 0..{K - 1}")
    X = _scale(images, scaling)
    return Dataset(examples=X, labels=one_hot(labels, K), N=X.shape[1])


def write_idx_images(path, images):
    images = np.asarray(images, dtype=np.uint8)
    if images.ndim != 3:
        raise DimensionError("images must have shape (count, rows, cols)")
    with open(path, "wb") as f:
        f.write(struct.pack(">4I", IDX_IMAGES_MAGIC, *images.shape))
        f.write(images.tobytes())


def write_idx_labels(path, labels):
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">2I", IDX_LABELS_MAGIC, labels.size))
        f.write(labels.tobytes())
