"""Learn a 500 x 20 dictionary from compressed simulated data and compare with alternating minimization.

    python demos/simulated_recovery.py [kind] [beta]

kind is identity, gaussian or row_sparse. Prints err(A, A_hat) per epoch for
both methods; a few minutes on one core.
"""

import sys

from randnet import (SimConfig, TrainConfig, dict_error, partition_and_compress, perturb_dictionary,
                     simulate, train_unsupervised)
from randnet.baseline import AltMinConfig, alternating_minimization


def main(kind="gaussian", beta=0.5):
    ds, A = simulate(SimConfig(N=500, p=20, J=4250, k=3, seed=3))
    train, _ = ds.split(4000)
    M = 500 if kind == "identity" else int(round(beta * 500))
    data = partition_and_compress(train, 40, kind, M, s=1, master_seed=3)
    A0 = perturb_dictionary(A, 0.5, seed=5)
    print(f"{kind}, beta={M / 500:.2f}, starting err {dict_error(A, A0):.3f}")

    cfg = TrainConfig(sigma=0.1, T=400, batch_size=64, learning_rate=1e-3, epochs=10, seed=0)
    _, hist = train_unsupervised(data, A0, cfg, A_true=A,
                                 on_epoch=lambda rec, _: print(f"  epoch {rec.epoch:2d}  err {rec.err:.4f}"))

    print("alternating minimization on the same measurements")
    alt = AltMinConfig(outer_iters=5, lam=cfg.resolve_lambda(20), T=400, compressed=kind != "identity")
    _, alt_hist = alternating_minimization(data, A0, alt, A_true=A)
    for rec in alt_hist:
        print(f"  round {rec.epoch:2d}  err {rec.err:.4f}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "gaussian", float(sys.argv[2]) if len(sys.argv) > 2 else 0.5)
