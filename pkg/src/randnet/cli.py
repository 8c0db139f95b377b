"""Command-line experiment drivers.

Every command reads a JSON experiment spec, validates it against
:data:`SPEC_SCHEMA` before doing any work, and writes CSV/JSON/.npy
outputs into ``--out``. Exit codes: 0 success, 1 usage or schema error,
2 numerical divergence, 3 I/O error.
"""

import argparse
import copy
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import bench as bench_mod
from .baseline import AltMinConfig, alternating_minimization
from .data import SimConfig, load_mnist_idx, partition_and_compress, simulate
from .dictionary import init_dictionary, load_dictionary, save_dictionary
from .encoder import encode_dataset
from .errors import DependencyError, DivergenceError, IDXFormatError, SchemaError, TruncatedFileError
from .grad import check_classifier, check_unsupervised
from .model import ClassifierParams, init_classifier
from .rng import derive_seed
from .train import (TrainConfig, _resolve_L, dict_error, eval_classification, perturb_dictionary,
                    train_classifier, train_unsupervised)

log = logging.getLogger("randnet")

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED, EXIT_IO = 0, 1, 2, 3
DATA_ENV = "RANDNET_DATA_DIR"
MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte", "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte", "test_labels": "t10k-labels-idx1-ubyte",
}

_POS_INT = {"type": "integer", "minimum": 1}
_NONNEG = {"type": "number", "minimum": 0}
_SEED = {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1}

SPEC_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["dataset", "measurement", "train", "stage"],
    "properties": {
        "dataset": {"oneOf": [
            {
                "type": "object", "additionalProperties": False, "required": ["source"],
                "properties": {
                    "source": {"const": "simulate"},
                    "N": _POS_INT, "p": _POS_INT, "J": _POS_INT, "k": _POS_INT,
                    "amplitude": {"type": "array", "items": _NONNEG, "minItems": 2, "maxItems": 2},
                    "noise": _NONNEG, "seed": _SEED, "n_train": _POS_INT,
                    "init_err": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                },
            },
            {
                "type": "object", "additionalProperties": False, "required": ["source"],
                "properties": {
                    "source": {"const": "mnist"},
                    "train_images": {"type": "string"}, "train_labels": {"type": "string"},
                    "test_images": {"type": "string"}, "test_labels": {"type": "string"},
                    "n_train": _POS_INT, "n_test": _POS_INT,
                    "scaling": {"enum": ["unit", "none", "standardize"]},
                },
            },
        ]},
        "measurement": {
            "type": "object", "additionalProperties": False, "required": ["kind"],
            "properties": {
                "kind": {"enum": ["identity", "gaussian", "row_sparse"]},
                "beta": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "M": _POS_INT, "s": _POS_INT, "B": _POS_INT, "master_seed": _SEED,
                "variance": {"enum": ["rows", "cols", "unit"]},
            },
        },
        "train": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "lambda": _NONNEG, "sigma": _NONNEG,
                "L": {"oneOf": [{"type": "number", "exclusiveMinimum": 0},
                                {"enum": ["estimate", "estimate_epoch"]}]},
                "T": _POS_INT, "batch_size": _POS_INT,
                "learning_rate": {"type": "number", "exclusiveMinimum": 0},
                "epochs": {"type": "integer", "minimum": 0},
                "classifier_epochs": {"type": "integer", "minimum": 0},
                "classifier_batch_size": _POS_INT,
                "classifier_learning_rate": {"type": "number", "exclusiveMinimum": 0},
                "beta1": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "beta2": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "adam_eps": {"type": "number", "exclusiveMinimum": 0},
                "seed": _SEED,
            },
        },
        "baseline": {
            "type": "object", "additionalProperties": False,
            "properties": {"outer_iters": {"type": "integer", "minimum": 0},
                           "compressed": {"type": "boolean"}},
        },
        "eval": {
            "type": "object", "additionalProperties": False,
            "properties": {"lambda_grid": {"type": "array", "items": _NONNEG, "minItems": 1}},
        },
        "stage": {"enum": ["unsup", "sup", "both"]},
        "output": {"type": "string"},
    },
}


def load_spec(path):
    try:
        with open(path) as f:
            spec = json.load(f)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from exc
    return validate_spec(spec)


def validate_spec(spec):
    """Schema check plus the cross-field rules a JSON schema cannot express."""
    try:
        jsonschema.validate(spec, SPEC_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise SchemaError(f"spec invalid at {where}: {exc.message}") from exc
    ds = spec["dataset"]
    if ds["source"] == "simulate":
        try:
            SimConfig(**_sim_kwargs(ds))
        except ValueError as exc:
            raise SchemaError(f"spec invalid at dataset: {exc}") from exc
        if ds.get("n_train", 0) > ds.get("J", SimConfig.J):
            raise SchemaError("spec invalid at dataset: n_train exceeds J")
    tr = spec["train"]
    if "lambda" not in tr and "sigma" not in tr:
        raise SchemaError("spec invalid at train: set lambda or sigma")
    m = spec["measurement"]
    if m["kind"] != "identity" and "beta" not in m and "M" not in m:
        raise SchemaError("spec invalid at measurement: set beta or M")
    return spec


def spec_hash(spec):
    return hashlib.sha256(json.dumps(spec, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _sim_kwargs(ds):
    kw = {k: ds[k] for k in ("N", "p", "J", "k", "noise", "seed") if k in ds}
    if "amplitude" in ds:
        kw["amplitude"] = tuple(ds["amplitude"])
    return kw


def train_config(spec, stage="unsup"):
    tr = spec["train"]
    kw = {
        "lam": tr.get("lambda"), "sigma": tr.get("sigma"), "L": tr.get("L", "estimate"),
        "T": tr.get("T", 400), "batch_size": tr.get("batch_size", 64),
        "learning_rate": tr.get("learning_rate", 1e-3), "epochs": tr.get("epochs", 10),
        "beta1": tr.get("beta1", 0.9), "beta2": tr.get("beta2", 0.999),
        "adam_eps": tr.get("adam_eps", 1e-8), "seed": tr.get("seed", 0),
    }
    if stage == "sup":
        kw["epochs"] = tr.get("classifier_epochs", kw["epochs"])
        kw["batch_size"] = tr.get("classifier_batch_size", kw["batch_size"])
        kw["learning_rate"] = tr.get("classifier_learning_rate", kw["learning_rate"])
        kw["seed"] = derive_seed(kw["seed"], 1)
    return TrainConfig(**kw)


def _mnist_path(ds, key):
    name = ds.get(key, MNIST_FILES[key])
    path = Path(name)
    if not path.is_absolute():
        root = os.environ.get(DATA_ENV)
        if root is None:
            raise FileNotFoundError(f"{name}: relative MNIST path and {DATA_ENV} is not set")
        path = Path(root) / path
        if not path.exists() and Path(str(path) + ".gz").exists():
            path = Path(str(path) + ".gz")
    return path


def build_datasets(spec):
    """(train, test, true dictionary or None), compressed as the experiment spec says.

    Test examples are compressed with fresh block matrices: their block
    seeds continue after the training blocks under the same master seed.
    """
    d, m = spec["dataset"], spec["measurement"]
    if d["source"] == "simulate":
        full, A_true = simulate(SimConfig(**_sim_kwargs(d)))
        n_train = d.get("n_train", min(full.J, 4000))
        train, test = full.split(n_train)
    else:
        train = load_mnist_idx(_mnist_path(d, "train_images"), _mnist_path(d, "train_labels"),
                               scaling=d.get("scaling", "unit"))
        test = load_mnist_idx(_mnist_path(d, "test_images"), _mnist_path(d, "test_labels"),
                              scaling=d.get("scaling", "unit"))
        train = train.take(np.arange(min(d.get("n_train", train.J), train.J)))
        test = test.take(np.arange(min(d.get("n_test", test.J), test.J)))
        A_true = None
    N = train.examples.shape[1]
    kind = m["kind"]
    M = N if kind == "identity" else m.get("M", int(round(m.get("beta", 1.0) * N)))
    B_train = min(m.get("B", 1), train.J)
    kw = dict(kind=kind, M=M, s=m.get("s", 1), master_seed=m.get("master_seed", 0),
              variance=m.get("variance", "rows"))
    train = partition_and_compress(train, B_train, **kw)
    if test.J:
        B_test = max(1, round(B_train * test.J / train.J))
        test = partition_and_compress(test, min(B_test, test.J), block_offset=B_train, **kw)
    else:
        test = None
    return train, test, A_true


def _write_npy(out, name, arr, manifest):
    path = out / name
    np.save(path, arr, allow_pickle=False)
    manifest["files"][name] = file_sha256(path)


def _write_text(out, name, text, manifest=None):
    path = out / name
    path.write_text(text)
    if manifest is not None:
        manifest["files"][name] = file_sha256(path)


def _write_manifest(out, manifest):
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def cmd_simulate(spec, out, threads=1):
    if spec["dataset"]["source"] != "simulate":
        raise SchemaError("simulate needs dataset.source = 'simulate'")
    train, test, A_true = build_datasets(spec)
    manifest = {"spec_sha256": spec_hash(spec), "train": train.manifest(),
                "test": test.manifest() if test else None, "files": {},
                "measurement_records": [phi.to_dict() for phi in train.phis()]}
    for name, ds in (("train", train), ("test", test)):
        if ds is None:
            continue
        _write_npy(out, f"{name}_compressed.npy", ds.compressed, manifest)
        _write_npy(out, f"{name}_blocks.npy", ds.blocks, manifest)
        _write_npy(out, f"{name}_codes.npy", ds.codes, manifest)
        _write_npy(out, f"{name}_examples.npy", ds.examples, manifest)
    save_dictionary(out / "true_dictionary.bin", A_true)
    manifest["files"]["true_dictionary.bin"] = file_sha256(out / "true_dictionary.bin")
    _write_manifest(out, manifest)
    return manifest


def _initial_dictionary(spec, train, A_true):
    d = spec["dataset"]
    seed = derive_seed(spec["train"].get("seed", 0), 2)
    if A_true is not None and "init_err" in d:
        return perturb_dictionary(A_true, d["init_err"], seed)
    return init_dictionary(train.N, _code_dim(spec, train), seed)


def _code_dim(spec, train):
    return spec["dataset"].get("p", 20) if spec["dataset"]["source"] == "simulate" else train.N


def _train_unsup(spec, out, train, A_true, manifest, threads=1):
    cfg = train_config(spec)
    cfg.threads = threads
    A0 = _initial_dictionary(spec, train, A_true)
    try:
        A, hist = train_unsupervised(train, A0, cfg, A_true=A_true, checkpoint_path=out / "dictionary.bin")
    except DivergenceError as exc:
        if exc.checkpoint is not None:
            save_dictionary(out / "dictionary.bin", exc.checkpoint)
        raise
    save_dictionary(out / "dictionary.bin", A)
    manifest["files"]["dictionary.bin"] = file_sha256(out / "dictionary.bin")
    _write_text(out, "history_unsup.csv", hist.to_csv(spec_hash(spec)))
    _write_text(out, "history_unsup.json", hist.to_json())
    if "baseline" in spec and A_true is not None:
        b = spec["baseline"]
        alt_cfg = AltMinConfig(outer_iters=b.get("outer_iters", 10), lam=cfg.resolve_lambda(A0.shape[1]),
                               T=cfg.T, compressed=b.get("compressed", True))
        A_alt, alt_hist = alternating_minimization(train, A0, alt_cfg, A_true=A_true)
        save_dictionary(out / "dictionary_altmin.bin", A_alt)
        _write_text(out, "history_altmin.csv", alt_hist.to_csv(spec_hash(spec)))
    return A, hist


def _train_sup(spec, out, train, A, manifest, threads=1):
    if train.labels is None:
        raise DependencyError("supervised stage needs a labeled dataset")
    cfg = train_config(spec, "sup")
    cfg.threads = threads
    params0 = init_classifier(train.labels.shape[1], A.shape[1], derive_seed(cfg.seed, 3))
    params, hist = train_classifier(train, A, params0, cfg)
    _write_npy(out, "classifier_C.npy", params.C, manifest)
    _write_npy(out, "classifier_d.npy", params.d, manifest)
    _write_text(out, "history_sup.csv", hist.to_csv(spec_hash(spec)))
    _write_text(out, "history_sup.json", hist.to_json())
    return params, hist


def cmd_train(spec, out, threads=1):
    train, test, A_true = build_datasets(spec)
    manifest = {"spec_sha256": spec_hash(spec), "stage": spec["stage"], "files": {}}
    if spec["stage"] in ("unsup", "both"):
        A, _ = _train_unsup(spec, out, train, A_true, manifest, threads)
    else:
        ckpt = out / "dictionary.bin"
        if not ckpt.exists():
            raise DependencyError(f"stage 'sup' needs a trained dictionary at {ckpt}; run stage 'unsup' first")
        A = load_dictionary(ckpt)
    if spec["stage"] in ("sup", "both"):
        _train_sup(spec, out, train, A, manifest, threads)
    _write_manifest(out, manifest)
    return manifest


def _load_classifier(ckpt):
    C, d = ckpt / "classifier_C.npy", ckpt / "classifier_d.npy"
    if not (C.exists() and d.exists()):
        return None
    return ClassifierParams(np.load(C), np.load(d))


def cmd_eval(spec, out, checkpoint=None, sweep=False, threads=1):
    ckpt = Path(checkpoint) if checkpoint else out
    train, test, A_true = build_datasets(spec)
    sh = spec_hash(spec)
    if sweep:
        return _lambda_sweep(spec, out, train, test, threads)
    if not (ckpt / "dictionary.bin").exists():
        raise DependencyError(f"no dictionary checkpoint in {ckpt}")
    A = load_dictionary(ckpt / "dictionary.bin")
    metrics = {"spec_sha256": sh}
    if A_true is not None:
        metrics["dict_error"] = dict_error(A_true, A)
    params = _load_classifier(ckpt)
    if params is not None and test is not None and test.labels is not None:
        cfg = train_config(spec, "sup")
        cfg.threads = threads
        metrics["test_error_pct"] = 100.0 * eval_classification(test, A, params, cfg)
    (out / "metrics.json").write_text(json.dumps(metrics, indent=1, sort_keys=True) + "\n")
    return metrics


def _lambda_sweep(spec, out, train, test, threads):
    """Retrain both stages at every lambda of the grid and record the test error."""
    grid = spec.get("eval", {}).get("lambda_grid", [0.5, 1.0, 1.5, 2.0, 2.2, 3.0, 4.0])
    if train.labels is None or test is None:
        raise DependencyError("lambda sweep needs labeled train and test sets")
    rows = []
    for lam in grid:
        sub = copy.deepcopy(spec)
        sub["train"].pop("sigma", None)
        sub["train"]["lambda"] = lam
        A0 = _initial_dictionary(sub, train, None)
        cfg = train_config(sub)
        cfg.threads = threads
        A, _ = train_unsupervised(train, A0, cfg)
        scfg = train_config(sub, "sup")
        scfg.threads = threads
        params0 = init_classifier(train.labels.shape[1], A.shape[1], derive_seed(scfg.seed, 3))
        L = _resolve_L(scfg, A, train.phis())
        codes = encode_dataset(train, A, scfg.resolve_lambda(A.shape[1]), L, scfg.T, threads=threads)
        params, _ = train_classifier(train, A, params0, scfg, codes=codes)
        err = eval_classification(test, A, params, scfg)
        log.info("lambda=%g test error %.2f%%", lam, 100 * err)
        rows.append({"lambda": lam, "error_pct": 100.0 * err})
    text = bench_mod.rows_to_csv(rows, spec_hash(spec), columns=("lambda", "error_pct"))
    (out / "lambda_sweep.csv").write_text(text)
    return rows


def cmd_bench(N, p, betas, s_values, out, seed=0, T=10, repeats=5):
    rows = bench_mod.bench_grid(N, p, betas, s_values, seed=seed, T=T, repeats=repeats)
    params = {"N": N, "p": p, "betas": list(betas), "s": list(s_values), "seed": seed, "T": T}
    (out / "bench.csv").write_text(bench_mod.rows_to_csv(rows, spec_hash(params)))
    return rows


def cmd_grad_check(n, seed, out=None, h=1e-6):
    worst = 0.0
    for i in range(n):
        for kind in ("gaussian", "row_sparse"):
            worst = max(worst, float(check_unsupervised(derive_seed(seed, i), kind, h=h)))
        worst = max(worst, float(check_classifier(derive_seed(seed, i, 1), h=h)))
    result = {"instances": 3 * n, "max_rel_error": worst, "h": h}
    if out is not None:
        (out / "grad_check.json").write_text(json.dumps(result, indent=1) + "\n")
    return result


def _parser():
    ap = argparse.ArgumentParser(prog="randnet", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, need_spec=True):
        if need_spec:
            p.add_argument("--spec", required=True, help="experiment spec JSON")
        p.add_argument("--out", help="output directory (default: spec 'output' or '.')")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--seed", type=int, help="override train.seed")
        return p

    common(sub.add_parser("simulate", help="generate and compress a simulated dataset"))
    common(sub.add_parser("train", help="train the auto-encoder and/or classifier"))
    ev = common(sub.add_parser("eval", help="dictionary error, test error, or lambda sweep"))
    ev.add_argument("--checkpoint", help="directory holding dictionary.bin (default: --out)")
    ev.add_argument("--lambda-sweep", action="store_true")
    be = common(sub.add_parser("bench", help="dense vs row-sparse operator timings"), need_spec=False)
    be.add_argument("--N", type=int, default=4096)
    be.add_argument("--p", type=int, default=256)
    be.add_argument("--beta", type=float, nargs="+", default=[0.1, 0.3, 0.5])
    be.add_argument("--s", type=int, nargs="+", default=[1, 3])
    be.add_argument("--T", type=int, default=10)
    gc = common(sub.add_parser("grad-check", help="finite-difference check of the gradients"), need_spec=False)
    gc.add_argument("--instances", type=int, default=20)
    return ap


def main(argv=None):
    ap = _parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        spec = None
        if getattr(args, "spec", None):
            spec = load_spec(args.spec)
            if args.seed is not None:
                spec["train"]["seed"] = args.seed
                validate_spec(spec)
        out = Path(args.out or (spec or {}).get("output", "."))
        out.mkdir(parents=True, exist_ok=True)
        if args.threads < 1:
            raise SchemaError("--threads must be >= 1")
        if args.command == "simulate":
            result = cmd_simulate(spec, out, args.threads)
            print(json.dumps(result["train"]))
        elif args.command == "train":
            cmd_train(spec, out, args.threads)
        elif args.command == "eval":
            result = cmd_eval(spec, out, args.checkpoint, args.lambda_sweep, args.threads)
            print(json.dumps(result))
        elif args.command == "bench":
            rows = cmd_bench(args.N, args.p, args.beta, args.s, out,
                             seed=args.seed or 0, T=args.T)
            sys.stdout.write(bench_mod.rows_to_csv(rows))
        elif args.command == "grad-check":
            result = cmd_grad_check(args.instances, args.seed or 0, out)
            print(json.dumps(result))
            if result["max_rel_error"] > 1e-5:
                return EXIT_DIVERGED
    except (SchemaError, DependencyError, ValueError) as exc:
        if isinstance(exc, (IDXFormatError, TruncatedFileError)):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_IO
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
