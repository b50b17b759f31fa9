"""Posterior sampling: the [M, B, C] logit tensor and what follows from it.

M weight configurations are drawn from the variational posterior (one rng
stream per model index, derived from a single seed, so results do not depend
on evaluation order), each is pushed through the network over the whole input
batch, and the stacked logits become the shared substrate for the predictive
distribution and every uncertainty score.
"""

from dataclasses import dataclass
import struct

import numpy as np

from . import kernels, variational_net
from .errors import ConfigError, DataError, NumericError


@dataclass(frozen=True)
class PosteriorLogits:
    """Logit tensor [M, B, C]: M model samples, B inputs, C classes."""

    tensor: np.ndarray

    def __post_init__(self):
        if self.tensor.ndim != 3:
            raise ConfigError("posterior logits must be [models, inputs, classes]")

    @property
    def n_models(self) -> int:
        return self.tensor.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.tensor.shape[1]

    @property
    def n_classes(self) -> int:
        return self.tensor.shape[2]


@dataclass(frozen=True)
class PredictiveBatch:
    """Monte Carlo predictive distribution and its argmax labels."""

    probs: np.ndarray    # [B, C], rows sum to 1
    labels: np.ndarray   # [B] int64


def sample_posterior_logits(params, inputs, n_models: int, seed) -> PosteriorLogits:
    """Draw n_models weight samples and stack forward(w_m, inputs).

    ``seed`` may be an int or a SeedSequence; model m always uses the m-th
    spawned child stream, so the tensor is bitwise reproducible and
    independent of any evaluation order or parallel schedule.
    """
    if n_models < 1:
        raise ConfigError("n_models must be at least 1")
    x = np.asarray(inputs, dtype=np.float64)
    if x.shape[1:] != params.input_shape:
        raise ConfigError(
            f"input shape {x.shape[1:]} does not match architecture input "
            f"{params.input_shape}")
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    children = ss.spawn(n_models)
    tensor = np.empty((n_models, x.shape[0], params.class_count))
    for m in range(n_models):
        sample = variational_net.sample_weights(params, np.random.default_rng(children[m]))
        tensor[m] = variational_net.forward(sample, x)
    if not np.all(np.isfinite(tensor)):
        raise NumericError("posterior logits contain non-finite values")
    return PosteriorLogits(tensor)


def predictive_distribution(pl: PosteriorLogits) -> PredictiveBatch:
    """probs[b] = mean_m softmax(logits[m, b]); labels by argmax, lowest
    index winning ties."""
    probs = kernels.mean_softmax_axis0(pl.tensor)
    labels = np.argmax(probs, axis=1).astype(np.int64)
    return PredictiveBatch(probs, labels)


def max_logit_slice(pl: PosteriorLogits, labels) -> np.ndarray:
    """out[m, b] = tensor[m, b, labels[b]]: each model's logit at the
    predicted label."""
    labels = np.asarray(labels)
    if labels.shape != (pl.n_inputs,):
        raise ConfigError(f"labels must have shape ({pl.n_inputs},)")
    if labels.size and (labels.min() < 0 or labels.max() >= pl.n_classes):
        raise ConfigError(f"labels must lie in [0, {pl.n_classes})")
    return pl.tensor[:, np.arange(pl.n_inputs), labels]


def save_logits(pl: PosteriorLogits, path):
    """Dump: >u4 M, B, C header then row-major big-endian float64 payload."""
    with open(path, "wb") as fh:
        fh.write(struct.pack(">III", pl.n_models, pl.n_inputs, pl.n_classes))
        fh.write(pl.tensor.astype(">f8").tobytes())


def load_logits(path) -> PosteriorLogits:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 12:
        raise DataError(f"{path}: file too short for a logit-tensor header")
    m, b, c = struct.unpack(">III", raw[:12])
    expected = 8 * m * b * c
    if len(raw) - 12 != expected:
        raise DataError(
            f"{path}: payload holds {len(raw) - 12} bytes, header needs {expected}")
    tensor = np.frombuffer(raw, dtype=">f8", offset=12).astype(np.float64).reshape(m, b, c)
    return PosteriorLogits(tensor)
