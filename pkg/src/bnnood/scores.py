"""Uncertainty scores over a posterior logit tensor.

Entropy-family baselines and logit-disagreement scores, all computed from one
shared [M, B, C] tensor so the decomposition PE = MI + EE holds exactly.

Entropy family (probability space):
  pe          entropy of the mean softmax (total uncertainty)
  ee          mean of the per-model entropies (aleatoric part)
  mi          pe - ee (epistemic part)
  softmax_ds  disagreement score over softmax likelihoods at the predicted label

Logit family (each model's logit at the predicted label, truncated to a small
positive epsilon when nonpositive, then normalized across models to weights
eta on the simplex):
  ds          1 / sum(eta^2): effective number of agreeing models, in [1, M]
  we          Shannon entropy of eta, in [0, ln M]
  kl_shift    -mean(ln(M * eta)): divergence of eta from uniform
  std_ll      sample standard deviation of the log truncated logits

Orientation is part of each score: ds, we, and softmax_ds drop toward OoD
(fewer effective models agree), the rest rise.  Downstream metrics consume
the orientation tag rather than assuming a direction.
"""

from dataclasses import dataclass
import json

import numpy as np

from . import core_math, kernels, posterior
from .errors import ConfigError

HIGHER_IS_OOD = "higher-is-OoD"
LOWER_IS_OOD = "lower-is-OoD"

# report-order registry of every score this package computes
ORIENTATIONS = {
    "pe": HIGHER_IS_OOD,
    "ee": HIGHER_IS_OOD,
    "mi": HIGHER_IS_OOD,
    "softmax_ds": LOWER_IS_OOD,
    "ds": LOWER_IS_OOD,
    "we": LOWER_IS_OOD,
    "std_ll": HIGHER_IS_OOD,
    "kl_shift": HIGHER_IS_OOD,
}
SCORE_NAMES = tuple(ORIENTATIONS)

DEFAULT_EPSILON = 1e-15


@dataclass(frozen=True)
class ScoreVector:
    name: str
    values: np.ndarray   # [B]
    orientation: str


def _vector(name, values) -> ScoreVector:
    return ScoreVector(name, np.asarray(values, dtype=np.float64), ORIENTATIONS[name])


# ---------------------------------------------------------------------------
# scalar building blocks (axis 0 = model axis; accept [M] or [M, B])
# ---------------------------------------------------------------------------


def truncate_logit(z, epsilon: float):
    """z if z > 0 else epsilon (strict: exactly 0 is truncated)."""
    if epsilon <= 0:
        raise ConfigError("epsilon must be positive")
    return np.where(np.asarray(z, dtype=np.float64) > 0, z, epsilon)


def normalized_weights(values) -> np.ndarray:
    """eta_m = values_m / sum(values): the normalized likelihood weights.

    Requires at least two strictly positive entries along the model axis;
    a nonpositive value signals a missing truncation upstream.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.shape[0] < 2:
        raise ConfigError("need at least 2 model samples")
    if np.any(v <= 0):
        raise ValueError("normalized_weights needs strictly positive inputs; "
                         "truncate logits first")
    return v / v.sum(axis=0)


def disagreement_score(eta):
    """1 / sum(eta^2): in [1, M], equal to M iff eta is uniform."""
    eta = np.asarray(eta, dtype=np.float64)
    return 1.0 / np.sum(eta * eta, axis=0)


def weight_entropy(eta):
    """-sum(eta ln eta) in nats, 0 ln 0 = 0; in [0, ln M]."""
    eta = np.asarray(eta, dtype=np.float64)
    terms = np.zeros_like(eta)
    nz = eta > 0
    terms[nz] = eta[nz] * np.log(eta[nz])
    return -terms.sum(axis=0)


def std_log_logits(zstar):
    """Sample standard deviation (divisor M - 1) of ln(zstar) over models."""
    z = np.asarray(zstar, dtype=np.float64)
    if z.shape[0] < 2:
        raise ConfigError("standard deviation needs at least 2 model samples")
    if np.any(z <= 0):
        raise ValueError("std_log_logits needs strictly positive inputs")
    return np.std(np.log(z), axis=0, ddof=1)


def kl_shift_estimate(eta):
    """-mean(ln(M eta)): nonnegative, zero iff eta is uniform."""
    eta = np.asarray(eta, dtype=np.float64)
    if np.any(eta == 0):
        raise ValueError("kl_shift_estimate needs strictly positive weights")
    m = eta.shape[0]
    return -np.log(m) - np.mean(np.log(eta), axis=0)


# ---------------------------------------------------------------------------
# per-batch scores
# ---------------------------------------------------------------------------


def predictive_entropy(pl: posterior.PosteriorLogits) -> ScoreVector:
    """Entropy of the Monte Carlo predictive distribution (total uncertainty)."""
    probs = kernels.mean_softmax_axis0(pl.tensor)
    return _vector("pe", core_math.shannon_entropy(probs, axis=-1))


def expected_entropy(pl: posterior.PosteriorLogits) -> ScoreVector:
    """Mean over models of each member's softmax entropy (aleatoric part)."""
    member_entropy = kernels.entropy_lastaxis(pl.tensor)  # [M, B]
    return _vector("ee", member_entropy.mean(axis=0))


def mutual_information(pl: posterior.PosteriorLogits) -> ScoreVector:
    """Epistemic part: predictive entropy minus expected entropy, computed
    from the same tensor so the decomposition is exact."""
    pe = predictive_entropy(pl).values
    ee = expected_entropy(pl).values
    return _vector("mi", pe - ee)


def _predicted_max_logits(pl: posterior.PosteriorLogits):
    predicted = posterior.predictive_distribution(pl).labels
    return posterior.max_logit_slice(pl, predicted), predicted


def logit_disagreement_suite(pl: posterior.PosteriorLogits,
                             epsilon: float = DEFAULT_EPSILON) -> dict:
    """ds, we, kl_shift, std_ll over the truncated max-logit weights.

    Per input: slice each model's logit at the predicted label, truncate to
    epsilon, normalize across models, and reduce.  Returns a dict of
    ScoreVectors keyed by score name.
    """
    if pl.n_models < 2:
        raise ConfigError("disagreement scores need at least 2 model samples")
    max_logits, _ = _predicted_max_logits(pl)           # [M, B]
    zstar = truncate_logit(max_logits, epsilon)
    eta = normalized_weights(zstar)
    return {
        "ds": _vector("ds", disagreement_score(eta)),
        "we": _vector("we", weight_entropy(eta)),
        "kl_shift": _vector("kl_shift", kl_shift_estimate(eta)),
        "std_ll": _vector("std_ll", std_log_logits(zstar)),
    }


def softmax_disagreement_score(pl: posterior.PosteriorLogits) -> ScoreVector:
    """Disagreement score over softmax likelihoods at the predicted label
    (already positive, so no truncation is involved)."""
    if pl.n_models < 2:
        raise ConfigError("disagreement scores need at least 2 model samples")
    member_probs = kernels.softmax_lastaxis(pl.tensor)
    predicted = posterior.predictive_distribution(pl).labels
    likelihoods = member_probs[:, np.arange(pl.n_inputs), predicted]  # [M, B]
    eta = normalized_weights(likelihoods)
    return _vector("softmax_ds", disagreement_score(eta))


def compute_all_scores(pl: posterior.PosteriorLogits,
                       epsilon: float = DEFAULT_EPSILON, names=None) -> dict:
    """Every registered score (or the requested subset), keyed by name."""
    wanted = set(SCORE_NAMES if names is None else names)
    unknown = wanted - set(SCORE_NAMES)
    if unknown:
        raise ConfigError(f"unknown score names: {sorted(unknown)}")
    out = {}
    if wanted & {"pe", "mi"}:
        pe = predictive_entropy(pl)
        out["pe"] = pe
    if wanted & {"ee", "mi"}:
        out["ee"] = expected_entropy(pl)
    if "mi" in wanted:
        out["mi"] = _vector("mi", out["pe"].values - out["ee"].values)
    if "softmax_ds" in wanted:
        out["softmax_ds"] = softmax_disagreement_score(pl)
    if wanted & {"ds", "we", "kl_shift", "std_ll"}:
        out.update(logit_disagreement_suite(pl, epsilon))
    return {name: out[name] for name in SCORE_NAMES if name in wanted}


def write_scores_csv(score_map: dict, path, dataset_tag: str,
                     config_echo: dict = None):
    """CSV of (input_index, dataset_tag, score_name, value, orientation).

    Values are written with repr (shortest round-tripping form).  When a
    config dict is given it is embedded as a leading comment line.
    """
    names = [n for n in SCORE_NAMES if n in score_map]
    with open(path, "w") as fh:
        if config_echo is not None:
            fh.write(f"# config {json.dumps(config_echo, sort_keys=True, separators=(',', ':'))}\n")
        fh.write("input_index,dataset_tag,score_name,value,orientation\n")
        for name in names:
            vec = score_map[name]
            for i, value in enumerate(vec.values):
                fh.write(f"{i},{dataset_tag},{name},{float(value)!r},"
                         f"{vec.orientation}\n")
