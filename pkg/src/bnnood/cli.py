"""Command-line entry point: train, score, and evaluate subcommands.

Configuration is resolved in three layers: preset defaults, then an optional
flat JSON config file, then explicit flags; the merged result is echoed into
every artifact together with its SHA-256 hash, so any output file names the
exact run that produced it.  Exit codes: 0 success, 2 configuration error,
3 data/I-O error, 4 numeric failure.

Dataset arguments accept the synthetic names ``blobs`` and ``ring`` or an
IDX file pair ``images_path:labels_path``.
"""

import argparse
import dataclasses
import hashlib
import json
import math
import os
import sys

import numpy as np

from . import data_io, ood_eval, posterior, scores, trainer, variational_net
from .errors import ConfigError, DataError, NumericError

# Geometry of the synthetic desk-scale datasets: three clusters on a circle
# of radius 2.5 (about 5.4 sigma pairwise separation, so validation accuracy
# improves gradually instead of saturating at the first epoch) and an OoD
# ring threading the inter-class void, where posterior samples genuinely
# disagree.  A far-away ring does NOT work: beyond the data shell the network
# extrapolates with confidently agreeing logits and every disagreement score
# inverts.
BLOB_CLASS_COUNT = 3
BLOB_RADIUS = 2.5
BLOB_SIGMA = 0.8
BLOB_ANGLES = (0.5 * np.pi, 7.0 / 6.0 * np.pi, 11.0 / 6.0 * np.pi)
RING_RADIUS = 1.2
RING_NOISE = 0.1

DEFAULTS = {
    "batch": 256,
    "epochs": 200,
    "epsilon": 1e-15,
    "eval_n": 5000,
    "lr": 0.001,
    "n_mc": 1,
    "out_dir": "bnnood-run",
    "pi": 0.1,
    "prior_variance": 0.01,
    "samples": 500,
    "seed": 7,
    "train_n": 3000,
    "val_fraction": 0.2,
    "val_samples": 8,
}

PRESETS = {
    "blobs": {
        "architecture": [2, 32, 32, 3],
        "data": "blobs",
        "ood": "ring",
    },
    "mnist-mlp": {
        "architecture": [784, 400, 400, 10],
    },
    "mnist-lenet": {
        "architecture": "lenet",
    },
}

# stable sub-seeds so each derived dataset gets its own stream
_PURPOSE_TRAIN_DATA = 0
_PURPOSE_INIT = 1
_PURPOSE_EVAL_ID = 2
_PURPOSE_SCORE_DATA = 3
_PURPOSE_SCORE_WEIGHTS = 4
_PURPOSE_EVAL_OOD_BASE = 100


def derived_seed(seed: int, purpose: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(purpose)]).generate_state(1)[0])


def blob_centers() -> np.ndarray:
    return np.stack([[BLOB_RADIUS * math.cos(a), BLOB_RADIUS * math.sin(a)]
                     for a in BLOB_ANGLES])


def build_architecture(arch_cfg):
    """Architecture config value -> (layer tuple, input_shape)."""
    if arch_cfg == "lenet":
        layers = (
            variational_net.conv2d(1, 6, 5), variational_net.softplus_layer(),
            variational_net.maxpool(2),
            variational_net.conv2d(6, 16, 5), variational_net.softplus_layer(),
            variational_net.maxpool(2),
            variational_net.dense(256, 120), variational_net.softplus_layer(),
            variational_net.dense(120, 84), variational_net.softplus_layer(),
            variational_net.dense(84, 10),
        )
        return layers, (1, 28, 28)
    if isinstance(arch_cfg, (list, tuple)) and all(isinstance(w, int) for w in arch_cfg):
        return variational_net.mlp(arch_cfg), (int(arch_cfg[0]),)
    raise ConfigError(f"unsupported architecture value: {arch_cfg!r}")


def resolve_dataset(spec: str, n: int, seed: int, input_shape, class_count: int):
    """Dataset spec string -> LabeledDataset reshaped for the network."""
    if spec == "blobs":
        per_class = -(-n // BLOB_CLASS_COUNT)  # ceil, so the pool covers n
        ds = data_io.make_gaussian_blobs(BLOB_CLASS_COUNT, per_class,
                                         blob_centers(), BLOB_SIGMA, seed)
    elif spec == "ring":
        ds = data_io.make_ring_ood(RING_RADIUS, n, RING_NOISE, seed)
    elif ":" in spec:
        images_path, labels_path = spec.split(":", 1)
        tag = os.path.basename(images_path).split(".")[0]
        ds = data_io.load_labeled_idx(images_path, labels_path, class_count, tag)
    else:
        raise ConfigError(
            f"dataset {spec!r} is not 'blobs', 'ring', or an 'images:labels' IDX pair")
    if ds.inputs[0].size != int(np.prod(input_shape)):
        raise ConfigError(
            f"dataset {ds.tag} has {ds.inputs[0].size} features per input, "
            f"network expects {input_shape}")
    return ds.reshaped(input_shape)


# ---------------------------------------------------------------------------
# config resolution
# ---------------------------------------------------------------------------


def _load_config_file(path) -> dict:
    try:
        with open(path) as fh:
            loaded = json.load(fh)
    except FileNotFoundError:
        raise DataError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(loaded, dict):
        raise ConfigError(f"config file {path} must hold a flat JSON object")
    return loaded


def effective_config(args, keys) -> dict:
    """Merge DEFAULTS < preset < config file < explicit flags for ``keys``."""
    preset = {}
    if args.preset is not None:
        if args.preset not in PRESETS:
            raise ConfigError(
                f"unknown preset {args.preset!r}; choose from {sorted(PRESETS)}")
        preset = PRESETS[args.preset]
    file_cfg = _load_config_file(args.config) if args.config else {}
    unknown = set(file_cfg) - set(DEFAULTS) - {"architecture", "data", "ood",
                                               "checkpoint", "scores"}
    if unknown:
        raise ConfigError(f"unknown config file keys: {sorted(unknown)}")

    merged = {"preset": args.preset}
    for key in keys:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            merged[key] = flag_value
        elif key in file_cfg:
            merged[key] = file_cfg[key]
        elif key in preset:
            merged[key] = preset[key]
        elif key in DEFAULTS:
            merged[key] = DEFAULTS[key]
        else:
            merged[key] = None
    return merged


def config_hash(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _parse_scores_flag(value):
    if value is None:
        return None
    names = [s.strip() for s in value.split(",") if s.strip()]
    unknown = set(names) - set(scores.SCORE_NAMES)
    if unknown:
        raise ConfigError(f"unknown score names: {sorted(unknown)}; "
                          f"available: {', '.join(scores.SCORE_NAMES)}")
    return names


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

_TRAIN_KEYS = ("architecture", "data", "out_dir", "seed", "epochs", "lr", "batch",
               "pi", "val_fraction", "n_mc", "val_samples", "train_n",
               "prior_variance")


def cmd_train(args) -> int:
    config = effective_config(args, _TRAIN_KEYS)
    if config["architecture"] is None:
        raise ConfigError("no architecture; use --preset or an architecture "
                          "entry in --config")
    if config["data"] is None:
        raise ConfigError("no training dataset; pass --data or --preset")
    config["command"] = "train"
    run_hash = config_hash(config)

    arch, input_shape = build_architecture(config["architecture"])
    _, _, class_count = variational_net.plan_layers(arch, input_shape)
    dataset = resolve_dataset(config["data"], config["train_n"],
                              derived_seed(config["seed"], _PURPOSE_TRAIN_DATA),
                              input_shape, class_count)
    params = variational_net.init_params(
        arch, derived_seed(config["seed"], _PURPOSE_INIT),
        config["prior_variance"], input_shape)
    train_config = trainer.TrainConfig(
        learning_rate=config["lr"], batch_size=config["batch"],
        epochs=config["epochs"], pi=config["pi"], seed=config["seed"],
        val_fraction=config["val_fraction"], n_mc=config["n_mc"],
        val_samples=config["val_samples"])

    out_dir = config["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    checkpoint_path = os.path.join(out_dir, "checkpoint.bin")
    _, report = trainer.train(params, dataset, train_config,
                              checkpoint_path, run_hash)
    report_path, curve_path = trainer.save_train_report(report, out_dir, config)
    print(f"checkpoint: {checkpoint_path}")
    print(f"report: {report_path}")
    print(f"curve: {curve_path}")
    print(f"best validation accuracy {report.best_val_accuracy:.4f} "
          f"at epoch {report.best_epoch}")
    return 0


_SCORE_KEYS = ("checkpoint", "data", "out_dir", "seed", "samples", "epsilon",
               "eval_n", "scores")


def cmd_score(args) -> int:
    config = effective_config(args, _SCORE_KEYS)
    if config["checkpoint"] is None:
        raise ConfigError("--checkpoint is required for score")
    if config["data"] is None:
        raise ConfigError("no dataset; pass --data or --preset")
    config["command"] = "score"

    params, _ = variational_net.load_checkpoint(config["checkpoint"])
    dataset = resolve_dataset(config["data"], config["eval_n"],
                              derived_seed(config["seed"], _PURPOSE_SCORE_DATA),
                              params.input_shape, params.class_count)
    logits = posterior.sample_posterior_logits(
        params, dataset.inputs, config["samples"],
        derived_seed(config["seed"], _PURPOSE_SCORE_WEIGHTS))
    score_map = scores.compute_all_scores(logits, config["epsilon"],
                                          _parse_scores_flag(config["scores"]))
    out_dir = config["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "scores.csv")
    scores.write_scores_csv(score_map, csv_path, dataset.tag, config)
    print(f"scores: {csv_path}")
    return 0


_EVAL_KEYS = ("checkpoint", "data", "ood", "out_dir", "seed", "samples",
              "epsilon", "eval_n", "scores")


def cmd_evaluate(args) -> int:
    config = effective_config(args, _EVAL_KEYS)
    for key in ("checkpoint", "data", "ood"):
        if config[key] is None:
            raise ConfigError(f"--{key} is required for evaluate "
                              "(directly, via --config, or via --preset)")
    config["command"] = "evaluate"

    params, _ = variational_net.load_checkpoint(config["checkpoint"])
    id_dataset = resolve_dataset(config["data"], config["eval_n"],
                                 derived_seed(config["seed"], _PURPOSE_EVAL_ID),
                                 params.input_shape, params.class_count)
    ood_specs = [s.strip() for s in str(config["ood"]).split(",") if s.strip()]
    ood_datasets = [
        resolve_dataset(spec, config["eval_n"],
                        derived_seed(config["seed"], _PURPOSE_EVAL_OOD_BASE + i),
                        params.input_shape, params.class_count)
        for i, spec in enumerate(ood_specs)
    ]
    # MNIST-family files share basenames (t10k-images-...), so colliding tags
    # would merge report rows and overwrite score dumps; suffix duplicates
    seen_tags = {id_dataset.tag}
    for i, ds in enumerate(ood_datasets):
        if ds.tag in seen_tags:
            ood_datasets[i] = dataclasses.replace(ds, tag=f"{ds.tag}-ood{i + 1}")
        seen_tags.add(ood_datasets[i].tag)
    report = ood_eval.run_benchmark(
        params, id_dataset, ood_datasets, config["samples"], config["eval_n"],
        config["epsilon"], config["seed"],
        score_names=_parse_scores_flag(config["scores"]),
        dump_dir=config["out_dir"], config_echo=config)
    json_path, txt_path = ood_eval.write_ood_report(report, config["out_dir"])
    sys.stdout.write(ood_eval.format_report_table(report))
    print(f"report: {json_path}")
    print(f"table: {txt_path}")
    return 0 if not report.errors else 3


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bnnood",
        description="Variational Bayesian networks with logit-disagreement "
                    "OoD scoring")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--preset", choices=sorted(PRESETS),
                       help="named architecture + dataset bundle")
        p.add_argument("--config", help="flat JSON config file (flags override)")
        p.add_argument("--seed", type=int)
        p.add_argument("--out-dir", dest="out_dir")

    p_train = sub.add_parser("train", help="fit variational parameters")
    common(p_train)
    p_train.add_argument("--data", help="'blobs' or an images:labels IDX pair")
    p_train.add_argument("--epochs", type=int)
    p_train.add_argument("--lr", type=float)
    p_train.add_argument("--batch", type=int)
    p_train.add_argument("--pi", type=float)
    p_train.add_argument("--train-n", dest="train_n", type=int,
                         help="synthetic training set size")
    p_train.set_defaults(func=cmd_train)

    p_score = sub.add_parser("score", help="uncertainty scores for one dataset")
    common(p_score)
    p_score.add_argument("--checkpoint")
    p_score.add_argument("--data")
    p_score.add_argument("--samples", type=int, help="posterior sample count M")
    p_score.add_argument("--epsilon", type=float)
    p_score.add_argument("--eval-n", dest="eval_n", type=int)
    p_score.add_argument("--scores", help="comma-separated score subset")
    p_score.set_defaults(func=cmd_score)

    p_eval = sub.add_parser("evaluate", help="OoD benchmark report")
    common(p_eval)
    p_eval.add_argument("--checkpoint")
    p_eval.add_argument("--data", help="in-distribution dataset")
    p_eval.add_argument("--ood", help="comma-separated OoD datasets")
    p_eval.add_argument("--samples", type=int, help="posterior sample count M")
    p_eval.add_argument("--epsilon", type=float)
    p_eval.add_argument("--eval-n", dest="eval_n", type=int)
    p_eval.add_argument("--scores", help="comma-separated score subset")
    p_eval.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
