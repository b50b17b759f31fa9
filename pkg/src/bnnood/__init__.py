"""Mean-field variational Bayesian networks with logit-disagreement OoD scoring.

Train a fully factorized Gaussian posterior over network weights, sample an
ensemble of M concrete models from it, and score inputs by how much those
models disagree: entropy-family baselines (predictive entropy, expected
entropy, mutual information) and logit-space scores built from each model's
logit at the predicted label (disagreement score, weight entropy, KL shift,
std of log-logits).  An evaluation harness turns score sets into AUROC /
FNR95 reports with OoD as the positive class.

Heavy kernels run through numba when available; set BNNOOD_BACKEND=numpy to
force the pure-numpy fallback (see bnnood.backend).
"""

__version__ = "0.1.0"

from .backend import ACTIVE as active_backend
from .data_io import LabeledDataset, make_gaussian_blobs, make_ring_ood
from .ood_eval import EvalPair, auroc, fnr_at_95_tnr, orient, run_benchmark
from .posterior import (PosteriorLogits, predictive_distribution,
                        sample_posterior_logits)
from .scores import ScoreVector, compute_all_scores
from .trainer import TrainConfig, train
from .variational_net import (VariationalParams, elbo_loss, forward,
                              init_params, kl_to_prior, load_checkpoint,
                              mlp, sample_weights, save_checkpoint)

__all__ = [
    "EvalPair", "LabeledDataset", "PosteriorLogits", "ScoreVector",
    "TrainConfig", "VariationalParams", "active_backend", "auroc",
    "compute_all_scores", "elbo_loss", "fnr_at_95_tnr", "forward",
    "init_params", "kl_to_prior", "load_checkpoint", "make_gaussian_blobs",
    "make_ring_ood", "mlp", "orient", "predictive_distribution",
    "run_benchmark", "sample_posterior_logits", "sample_weights",
    "save_checkpoint", "train", "__version__",
]
