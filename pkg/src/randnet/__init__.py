"""Dictionary learning and sparse-coding classification from randomly compressed data."""

from .data import Dataset, SimConfig, load_mnist_idx, partition_and_compress, simulate
from .dictionary import estimate_lipschitz, init_dictionary, load_dictionary, normalize_columns, save_dictionary
from .encoder import encode_batch, encode_dataset, fista_encode, soft_threshold
from .errors import *  # noqa: F401,F403
from .grad import backprop_classifier, backprop_unsupervised, finite_diff_check
from .measurement import MeasurementMatrix, adjoint, gen_gaussian, gen_row_sparse, identity, project
from .model import ClassifierParams, classify, decode, init_classifier
from .train import (TrainConfig, TrainHistory, adam_step, dict_error, eval_classification,
                    perturb_dictionary, train_classifier, train_unsupervised)

__version__ = "0.1.0"
