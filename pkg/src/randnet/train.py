"""Mini-batch training, the ADAM optimizer and evaluation metrics.

Training runs in two stages. :func:`train_unsupervised` learns the
dictionary from compressed data by backpropagating the reconstruction loss
through the unrolled encoder; :func:`train_classifier` then freezes the
dictionary and fits the softmax head on the encoder output.
"""

import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .dictionary import estimate_lipschitz_blocks, normalize_columns, save_dictionary
from .encoder import BlockGram, encode_batch, encode_dataset
from .errors import ConvergenceError, DegenerateDictionaryError, DimensionError, DivergenceError
from .grad import backprop_classifier, batch_backprop_unsupervised
from .model import classify, ce_loss
from .rng import derive_seed, make_rng


@dataclass
class TrainConfig:
    lam: float = None
    sigma: float = None
    L: object = "estimate"        # a number, "estimate" (once) or "estimate_epoch"
    T: int = 400
    batch_size: int = 64
    learning_rate: float = 1e-3
    epochs: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    safety: float = 1.1
    threads: int = 1

    def __post_init__(self):
        if self.lam is None and self.sigma is None:
            raise ValueError("set either lam or sigma")
        if self.lam is not None and self.lam < 0:
            raise ValueError("lam must be non-negative")
        if self.sigma is not None and self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.T < 1 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("T and batch_size must be positive, epochs non-negative")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("ADAM betas must lie in (0, 1)")
        if not isinstance(self.L, str) and self.L <= 0:
            raise ValueError("L must be positive")
        if isinstance(self.L, str) and self.L not in ("estimate", "estimate_epoch"):
            raise ValueError("L must be a number, 'estimate' or 'estimate_epoch'")

    def resolve_lambda(self, p):
        """lam directly, or sigma * sqrt(2 ln p)."""
        if self.lam is not None:
            return float(self.lam)
        return float(self.sigma * math.sqrt(2.0 * math.log(p)))


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, param):
        return cls(np.zeros_like(param), np.zeros_like(param), 0)


def adam_step(param, grad, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected ADAM update; returns new (param, state) without mutating inputs."""
    if param.shape != grad.shape:
        raise DimensionError(f"parameter {param.shape} and gradient {grad.shape} differ")
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * grad
    v = beta2 * state.v + (1.0 - beta2) * (grad * grad)
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    return param - lr * m_hat / (np.sqrt(v_hat) + eps), AdamState(m, v, t)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    err: float = None
    error_rate: float = None
    seconds: float = 0.0


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)

    COLUMNS = ("epoch", "loss", "err", "error_rate", "seconds")

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def append(self, rec):
        self.records.append(rec)

    def column(self, name):
        return [getattr(r, name) for r in self.records]

    def to_csv(self, spec_hash=None):
        buf = io.StringIO()
        if spec_hash is not None:
            buf.write(f"# spec_sha256={spec_hash}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for r in self.records:
            w.writerow(["" if getattr(r, c) is None else repr(getattr(r, c)) for c in self.COLUMNS])
        return buf.getvalue()

    def to_json(self):
        return json.dumps([asdict(r) for r in self.records], indent=1)

    def deterministic_view(self):
        """Records without wall-clock time, for reproducibility comparisons."""
        return [(r.epoch, r.loss, r.err, r.error_rate) for r in self.records]


def epoch_permutation(seed, epoch, J):
    return make_rng(derive_seed(seed, 0x5EED, epoch)).permutation(J)


def dict_error(A_true, A_est):
    """max_i sqrt(1 - <a_i, b_i>^2 / (|a_i|^2 |b_i|^2)), columns compared index by index."""
    A_true = np.asarray(A_true, dtype=float)
    A_est = np.asarray(A_est, dtype=float)
    if A_true.shape != A_est.shape:
        raise DimensionError(f"shapes {A_true.shape} and {A_est.shape} differ")
    na = np.sum(A_true * A_true, axis=0)
    nb = np.sum(A_est * A_est, axis=0)
    if np.any(na <= 0) or np.any(nb <= 0):
        raise DegenerateDictionaryError("zero column in dict_error")
    cos2 = np.sum(A_true * A_est, axis=0) ** 2 / (na * nb)
    return float(np.sqrt(np.clip(1.0 - cos2, 0.0, 1.0)).max())


def perturb_dictionary(A_true, target_err, seed, tol=0.02, max_iter=100):
    """Gaussian perturbation of every column, scaled by bisection so err(A, A_hat) ~ target_err.

    The noise direction is fixed by ``seed``; only its scale is searched.
    Each column's angle to the truth grows monotonically with the scale, so
    the error does too.
    """
    if not 0 < target_err < 1:
        raise ValueError("target_err must lie in (0, 1)")
    A_true = normalize_columns(A_true)
    # a derived stream, so a caller reusing the dictionary's own seed gets independent noise
    G = make_rng(derive_seed(seed, 0xA70B)).standard_normal(A_true.shape) / np.sqrt(A_true.shape[0])

    def err_at(scale):
        return dict_error(A_true, normalize_columns(A_true + scale * G))

    lo, hi = 0.0, 1.0
    while err_at(hi) < target_err:
        hi *= 2.0
        if hi > 1e8:
            raise ConvergenceError("perturbation cannot reach the target error")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        e = err_at(mid)
        if abs(e - target_err) <= tol * 0.05:
            break
        if e < target_err:
            lo = mid
        else:
            hi = mid
    A_hat = normalize_columns(A_true + mid * G)
    if abs(dict_error(A_true, A_hat) - target_err) > tol:
        raise ConvergenceError("bisection did not reach the target error")
    return A_hat


def _resolve_L(cfg, A, phis):
    if isinstance(cfg.L, str):
        return estimate_lipschitz_blocks(A, phis, safety=cfg.safety, iters=1000)
    return float(cfg.L)


def _unit_columns(A0):
    """A0 itself (as float64) when its columns are already unit norm, else its normalization."""
    A = np.array(A0, dtype=np.float64)
    if np.all(np.abs(np.linalg.norm(A, axis=0) - 1.0) <= 1e-10):
        return A
    return normalize_columns(A)


def _batches(order, size):
    for start in range(0, len(order), size):
        yield order[start:start + size]


def reconstruction_loss(ds, A, cfg, L=None, chunk=1024):
    """Mean per-example 1/2 ||r - Phi A x_T||^2 over a compressed dataset."""
    phis = ds.phis()
    lam = cfg.resolve_lambda(A.shape[1])
    if L is None:
        L = _resolve_L(cfg, A, phis)
    total = 0.0
    for start in range(0, ds.J, chunk):
        sl = slice(start, min(start + chunk, ds.J))
        gram = BlockGram(A, phis, ds.blocks[sl], ds.compressed[sl])
        X, _ = encode_batch(ds.compressed[sl], A, phis, ds.blocks[sl], lam, L, cfg.T, gram=gram)
        resid = gram.decode(X) - ds.compressed[sl]
        total += 0.5 * float(np.sum(resid * resid))
    return total / ds.J


def train_unsupervised(ds, A0, cfg, A_true=None, checkpoint_path=None, on_epoch=None):
    """Learn the dictionary from ``ds.compressed``.

    Per batch: encode with trace, decode, backpropagate the summed
    reconstruction loss, take an ADAM step on A and project its columns back
    to unit norm. ``A_true`` (or ``ds.true_dictionary``) adds err(A, A_hat)
    to the history. On a non-finite loss a :class:`DivergenceError` carrying
    the last finite epoch's dictionary is raised.
    """
    if ds.compressed is None:
        raise DimensionError("dataset is not compressed")
    A = _unit_columns(A0)
    if A_true is None:
        A_true = ds.true_dictionary
    phis = ds.phis()
    lam = cfg.resolve_lambda(A.shape[1])
    L = _resolve_L(cfg, A, phis) if cfg.epochs > 0 else None
    state = AdamState.zeros_like(A)
    history = TrainHistory()
    checkpoint = A.copy()
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        if cfg.L == "estimate_epoch" and epoch > 1:
            L = _resolve_L(cfg, A, phis)
        total = 0.0
        for idx in _batches(epoch_permutation(cfg.seed, epoch, ds.J), cfg.batch_size):
            R = ds.compressed[idx]
            try:
                _, trace = encode_batch(R, A, phis, ds.blocks[idx], lam, L, cfg.T, keep_trace=True)
            except DivergenceError as exc:
                raise DivergenceError(f"encoder diverged in epoch {epoch}", iteration=epoch,
                                      checkpoint=checkpoint) from exc
            grad, loss = batch_backprop_unsupervised(trace, R)
            if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
                raise DivergenceError(f"non-finite loss in epoch {epoch}", iteration=epoch, checkpoint=checkpoint)
            total += loss
            A, state = adam_step(A, grad, state, cfg.learning_rate,
                                 cfg.beta1, cfg.beta2, cfg.adam_eps)
            try:
                A = normalize_columns(A)
            except DegenerateDictionaryError as exc:
                raise DivergenceError(str(exc), iteration=epoch, checkpoint=checkpoint) from exc
        checkpoint = A.copy()
        if checkpoint_path is not None:
            save_dictionary(checkpoint_path, A)
        rec = EpochRecord(epoch, total / ds.J,
                          err=dict_error(A_true, A) if A_true is not None else None,
                          seconds=time.perf_counter() - t0)
        history.append(rec)
        if on_epoch is not None:
            on_epoch(rec, A)
    return A, history


def train_classifier(ds, A, params0, cfg, codes=None):
    """Fit C and d on the frozen-dictionary codes of ``ds`` with ADAM on the cross-entropy.

    The dictionary does not change during this stage, so each example's
    code is computed once up front (or passed in as ``codes``) and reused
    by every epoch.
    """
    if ds.labels is None:
        raise DimensionError("dataset has no labels")
    params = params0.copy()
    history = TrainHistory()
    if cfg.epochs == 0:
        return params, history
    if codes is None:
        lam = cfg.resolve_lambda(A.shape[1])
        L = _resolve_L(cfg, A, ds.phis())
        codes = encode_dataset(ds, A, lam, L, cfg.T, threads=cfg.threads)
    U = ds.labels
    sC = AdamState.zeros_like(params.C)
    sd = AdamState.zeros_like(params.d)
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        total = 0.0
        wrong = 0
        for idx in _batches(epoch_permutation(cfg.seed, epoch, ds.J), cfg.batch_size):
            X, Ub = codes[idx], U[idx]
            bundle = backprop_classifier(X, Ub, params)
            if not (math.isfinite(bundle.loss_value) and bundle.is_finite()):
                raise DivergenceError(f"non-finite classifier loss in epoch {epoch}", iteration=epoch,
                                      checkpoint=params.copy())
            total += bundle.loss_value
            wrong += int(np.sum(np.argmax(classify(X, params), axis=1) != np.argmax(Ub, axis=1)))
            C, sC = adam_step(params.C, bundle.delta_c, sC, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)
            d, sd = adam_step(params.d, bundle.delta_d, sd, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)
            params.C, params.d = C, d
        history.append(EpochRecord(epoch, total / ds.J, error_rate=wrong / ds.J,
                                   seconds=time.perf_counter() - t0))
    return params, history


def predict(codes, params):
    """Class indices; np.argmax breaks ties toward the lowest index."""
    return np.argmax(classify(codes, params), axis=1)


def eval_classification(ds, A, params, cfg, codes=None, L=None):
    """Fraction of examples whose predicted class differs from the label."""
    if codes is None:
        lam = cfg.resolve_lambda(A.shape[1])
        if L is None:
            L = _resolve_L(cfg, A, ds.phis())
        codes = encode_dataset(ds, A, lam, L, cfg.T, threads=cfg.threads)
    return float(np.mean(predict(codes, params) != np.argmax(ds.labels, axis=1)))


def classification_loss(codes, labels, params):
    return ce_loss(classify(codes, params), labels) / len(codes)
