"""Convert a CSV of flattened 28x28 digits (label in the last column) into IDX files.

    python demos/csv_to_idx.py digits.csv[.gz] OUT_DIR [n_test]

Rows are shuffled with a fixed seed, then split into train and t10k files
named like the standard MNIST distribution, so ``RANDNET_DATA_DIR=OUT_DIR``
works with the CLI and the acceptance tests.
"""

import sys
from pathlib import Path

import numpy as np

from randnet.data import write_idx_images, write_idx_labels


def main(src, out, n_test=1000):
    raw = np.loadtxt(src, delimiter=",")
    if raw.shape[1] != 785:
        raise SystemExit(f"expected 785 columns, got {raw.shape[1]}")
    raw = raw[np.random.default_rng(0).permutation(len(raw))]
    images = np.clip(np.rint(raw[:, :784]), 0, 255).astype(np.uint8).reshape(-1, 28, 28)
    labels = raw[:, 784].astype(np.uint8)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    n_train = len(raw) - n_test
    write_idx_images(out / "train-images-idx3-ubyte", images[:n_train])
    write_idx_labels(out / "train-labels-idx1-ubyte", labels[:n_train])
    write_idx_images(out / "t10k-images-idx3-ubyte", images[n_train:])
    write_idx_labels(out / "t10k-labels-idx1-ubyte", labels[n_train:])
    print(f"{n_train} train / {n_test} test images written to {out}")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2], int(sys.argv[3]) if len(sys.argv) > 3 else 1000)
