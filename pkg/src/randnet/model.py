"""Decoder, reconstruction loss and the softmax classification head."""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .measurement import ChainedOperator
from .rng import make_rng

# floor applied to probabilities inside ce_loss only
PROB_FLOOR = 1e-300


@dataclass
class ClassifierParams:
    C: np.ndarray  # (K, p)
    d: np.ndarray  # (K,)

    @property
    def K(self):
        return self.C.shape[0]

    def copy(self):
        return ClassifierParams(self.C.copy(), self.d.copy())


def init_classifier(K, p, seed):
    """Entries i.i.d. uniform on [-1/sqrt(p), 1/sqrt(p)]."""
    rng = make_rng(seed)
    bound = 1.0 / np.sqrt(p)
    return ClassifierParams(rng.uniform(-bound, bound, (K, p)), rng.uniform(-bound, bound, K))


def one_hot(labels, K=10):
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, K))
    out[np.arange(labels.size), labels] = 1.0
    return out


def decode(x_T, A, phi):
    """Tied decoder: r_hat = Phi A x_T."""
    if np.shape(x_T)[0] != np.shape(A)[1]:
        raise DimensionError(f"code length {np.shape(x_T)[0]} != dictionary width {np.shape(A)[1]}")
    return ChainedOperator(phi, A).forward(x_T)


def recon_loss(r, r_hat):
    diff = np.asarray(r) - np.asarray(r_hat)
    if diff.ndim == 1:
        return 0.5 * float(diff @ diff)
    return 0.5 * float(np.sum(diff * diff))


def logits(x_T, params):
    """q = C x + d; rows of a 2-D ``x_T`` are separate examples."""
    x_T = np.asarray(x_T)
    if x_T.shape[-1] != params.C.shape[1]:
        raise DimensionError(f"code length {x_T.shape[-1]} != classifier width {params.C.shape[1]}")
    return x_T @ params.C.T + params.d


def softmax(q):
    q = np.asarray(q, dtype=float)
    e = np.exp(q - q.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def classify(x_T, params):
    """Class probabilities softmax(C x_T + d)."""
    return softmax(logits(x_T, params))


def ce_loss(u_hat, u):
    """-sum_k u_k log u_hat_k (summed over rows for 2-D input)."""
    u_hat = np.maximum(np.asarray(u_hat, dtype=float), PROB_FLOOR)
    return float(-np.sum(np.asarray(u) * np.log(u_hat)))
