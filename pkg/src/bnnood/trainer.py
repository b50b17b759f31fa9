"""Minibatch SGVB training loop with Adam and best-validation checkpointing.

The dataset is shuffled and split (default 80/20), each epoch runs Adam over
reshuffled minibatches of the variational objective, and after every epoch
validation accuracy is measured with a small posterior sample (the mean
softmax over ``val_samples`` weight draws).  Parameters are checkpointed
whenever validation accuracy strictly improves, so the retained model is the
best validator, not the last iterate.

All randomness (split, shuffles, weight noise, validation draws) derives from
the single config seed; two runs with equal configs are bitwise identical.
"""

from dataclasses import dataclass, field
import json
import math
import os

import numpy as np

from . import posterior, variational_net
from .data_io import LabeledDataset
from .errors import ConfigError, TrainingDiverged

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 256
    epochs: int = 200
    pi: float = 0.1
    seed: int = 0
    val_fraction: float = 0.2
    n_mc: int = 1           # weight draws per optimizer step
    val_samples: int = 8    # posterior draws for in-training validation accuracy

    def validate(self):
        if not 0 < self.val_fraction < 1:
            raise ConfigError("val_fraction must lie strictly between 0 and 1")
        if self.learning_rate <= 0 or self.batch_size <= 0:
            raise ConfigError("learning_rate and batch_size must be positive")
        if self.epochs < 0 or self.n_mc < 1 or self.val_samples < 1:
            raise ConfigError("epochs must be >= 0; n_mc and val_samples >= 1")
        if self.pi < 0:
            raise ConfigError("pi must be nonnegative")
        return self


@dataclass
class TrainReport:
    epoch_losses: list = field(default_factory=list)
    val_accuracies: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_accuracy: float = 0.0
    checkpoint_path: str = None


def split_dataset(data: LabeledDataset, val_fraction: float, seed: int):
    """Shuffle then split into disjoint, exhaustive (train, validation) parts.

    The validation size is round(N * val_fraction), clamped so both parts are
    nonempty.  Deterministic per seed.
    """
    if not 0 < val_fraction < 1:
        raise ConfigError("val_fraction must lie strictly between 0 and 1")
    n = len(data)
    if n < 2:
        raise ConfigError("need at least 2 records to split")
    perm = np.random.default_rng(seed).permutation(n)
    n_val = int(math.floor(n * val_fraction + 0.5))
    n_val = min(max(n_val, 1), n - 1)
    return data.subset(perm[n_val:]), data.subset(perm[:n_val])


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, size: int) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size))


def adam_step(state: AdamState, gradient, learning_rate: float) -> np.ndarray:
    """Advance one Adam step; returns the update to SUBTRACT from the
    parameters (bias-corrected, beta1 0.9 / beta2 0.999 / eps 1e-8)."""
    g = np.asarray(gradient)
    state.step += 1
    state.m = ADAM_BETA1 * state.m + (1.0 - ADAM_BETA1) * g
    state.v = ADAM_BETA2 * state.v + (1.0 - ADAM_BETA2) * g * g
    m_hat = state.m / (1.0 - ADAM_BETA1 ** state.step)
    v_hat = state.v / (1.0 - ADAM_BETA2 ** state.step)
    return learning_rate * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


def _validation_accuracy(params, val_set, n_samples, seed_seq):
    logits = posterior.sample_posterior_logits(params, val_set.inputs, n_samples, seed_seq)
    predicted = posterior.predictive_distribution(logits).labels
    return float(np.mean(predicted == val_set.labels))


def train(params, data: LabeledDataset, config: TrainConfig,
          checkpoint_path=None, config_hash: str = None):
    """Optimize ``params`` on ``data``; returns (best_params, TrainReport).

    ``params`` is mutated in place by the optimizer; the returned parameters
    are the best-validation snapshot (the initial parameters when epochs is
    0).  When ``checkpoint_path`` is given, that snapshot is also kept on
    disk, rewritten on every improvement.
    """
    config.validate()
    data.validate()
    if data.class_count != params.class_count:
        raise ConfigError(
            f"dataset has {data.class_count} classes, network emits {params.class_count}")

    train_set, val_set = split_dataset(data, config.val_fraction, config.seed)
    shuffle_ss, mc_ss, val_ss = np.random.SeedSequence(config.seed).spawn(3)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    mc_rng = np.random.default_rng(mc_ss)

    count = params.weight_count
    state_mu = AdamState.zeros(count)
    state_rho = AdamState.zeros(count)
    best = VariationalBest(params, checkpoint_path, config_hash)
    report = TrainReport(checkpoint_path=checkpoint_path)

    n_train = len(train_set)
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(n_train)
        batch_losses = []
        for start in range(0, n_train, config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, g_mu, g_rho = variational_net.elbo_loss(
                params, train_set.inputs[idx], train_set.labels[idx],
                config.pi, mc_rng, config.n_mc)
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, batch offset {start}")
            params.mu -= adam_step(state_mu, g_mu, config.learning_rate)
            params.rho -= adam_step(state_rho, g_rho, config.learning_rate)
            batch_losses.append(loss)
        report.epoch_losses.append(float(np.mean(batch_losses)))
        accuracy = _validation_accuracy(params, val_set, config.val_samples,
                                        val_ss.spawn(1)[0])
        report.val_accuracies.append(accuracy)
        if accuracy > report.best_val_accuracy or report.best_epoch < 0:
            report.best_val_accuracy = accuracy
            report.best_epoch = epoch
            best.update(params)

    return best.params, report


class VariationalBest:
    """Holds the best-so-far parameter snapshot and mirrors it to disk."""

    def __init__(self, params, checkpoint_path, config_hash):
        self._arch = params.architecture
        self._input_shape = params.input_shape
        self._prior = params.prior_variance
        self._path = checkpoint_path
        self._hash = config_hash
        self.params = None
        self.update(params)

    def update(self, params):
        self.params = variational_net.VariationalParams(
            params.mu.copy(), params.rho.copy(), self._arch,
            self._input_shape, self._prior)
        if self._path is not None:
            variational_net.save_checkpoint(self.params, self._path, self._hash)


def save_train_report(report: TrainReport, out_dir, config_echo: dict):
    """Write <out_dir>/train_report.json and train_curve.csv.

    Both artifacts embed the effective run configuration; neither contains
    timestamps, so equal configs give byte-identical files.
    """
    os.makedirs(out_dir, exist_ok=True)
    json_path = os.path.join(out_dir, "train_report.json")
    csv_path = os.path.join(out_dir, "train_curve.csv")
    payload = {
        "best_epoch": report.best_epoch,
        "best_val_accuracy": report.best_val_accuracy,
        "checkpoint_path": report.checkpoint_path,
        "config": config_echo,
        "epochs_run": len(report.epoch_losses),
        "final_train_loss": report.epoch_losses[-1] if report.epoch_losses else None,
    }
    with open(json_path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    config_line = json.dumps(config_echo, sort_keys=True, separators=(",", ":"))
    with open(csv_path, "w") as fh:
        fh.write(f"# config {config_line}\n")
        fh.write("epoch,train_loss,val_accuracy\n")
        for epoch, (loss, acc) in enumerate(zip(report.epoch_losses,
                                                report.val_accuracies)):
            fh.write(f"{epoch},{loss!r},{acc!r}\n")
    return json_path, csv_path
