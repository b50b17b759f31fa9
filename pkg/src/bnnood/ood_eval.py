"""OoD evaluation protocol: balanced score sets, AUROC, FNR95, reports.

OoD is the positive class throughout.  Every score carries an orientation
tag; ``orient`` negates lower-is-OoD scores once, so the metric code can
assume higher means more OoD.  AUROC is the Mann-Whitney statistic computed
from midranks in O(n log n) with ties at half weight; FNR95 uses the
ceil(0.95 n)-th order statistic of the in-distribution scores as the
threshold and counts OoD scores at or below it as missed.
"""

from dataclasses import dataclass, replace
import json
import os
import warnings

import numpy as np

from . import posterior, scores, variational_net
from .errors import BnnoodError, ConfigError, DataError

OOD_POSITIVE = "OoD"  # positive class for every metric in this module


@dataclass(frozen=True)
class EvalPair:
    """Scores for one (in-distribution, OoD) dataset pair under one score."""

    id_scores: np.ndarray
    ood_scores: np.ndarray
    score_name: str
    orientation: str


@dataclass
class OodReport:
    rows: list      # dicts: in/out dataset, score_name, auroc_pct, fnr95_pct, ...
    errors: list    # dicts: dataset, error (per-dataset failures, run continued)
    meta: dict


def orient(pair: EvalPair) -> EvalPair:
    """Flip lower-is-OoD scores so that higher always means more OoD."""
    if pair.orientation == scores.LOWER_IS_OOD:
        return replace(pair, id_scores=-np.asarray(pair.id_scores),
                       ood_scores=-np.asarray(pair.ood_scores),
                       orientation=scores.HIGHER_IS_OOD)
    return pair


def _finite_scores(pair):
    ids = np.asarray(pair.id_scores, dtype=np.float64)
    oods = np.asarray(pair.ood_scores, dtype=np.float64)
    if ids.size == 0 or oods.size == 0:
        raise ConfigError("both score sets must be nonempty")
    if not (np.all(np.isfinite(ids)) and np.all(np.isfinite(oods))):
        raise ConfigError("scores must be finite")
    return ids, oods


def auroc(pair: EvalPair) -> float:
    """P(OoD score > iD score) + 0.5 P(tie), via midranks.

    Expects an oriented pair (higher is OoD); equals the brute-force pairwise
    count exactly, since midrank sums are exact half-integer arithmetic.
    """
    ids, oods = _finite_scores(pair)
    combined = np.sort(np.concatenate([ids, oods]))
    lo = np.searchsorted(combined, oods, side="left")
    hi = np.searchsorted(combined, oods, side="right")
    midranks = 0.5 * (lo + hi + 1)  # 1-based average rank of each OoD score
    n_pos = oods.size
    u = midranks.sum() - 0.5 * n_pos * (n_pos + 1)
    return float(u / (n_pos * ids.size))


def fnr_at_95_tnr(pair: EvalPair) -> float:
    """Fraction of OoD scores at or below the 95th-percentile iD score.

    The threshold is the ceil(0.95 n)-th order statistic, so at least 95% of
    in-distribution inputs are accepted.  Requires n_id >= 20 for the
    quantile to be meaningful.
    """
    ids, oods = _finite_scores(pair)
    n_id = ids.size
    if n_id < 20:
        raise ConfigError(f"FNR95 needs at least 20 iD scores, got {n_id}")
    k = (19 * n_id + 19) // 20  # ceil(0.95 * n_id), exact in integers
    tau = np.partition(ids, k - 1)[k - 1]
    return float(np.mean(oods <= tau))


def _subsample(pool: np.ndarray, n: int, rng) -> np.ndarray:
    size = pool.shape[0]
    if size == 0:
        raise DataError("cannot sample from an empty pool")
    if n > size:
        warnings.warn(f"requested {n} samples from a pool of {size}; clipping",
                      stacklevel=3)
        n = size
    return pool[rng.choice(size, size=n, replace=False)]


def sample_eval_sets(id_pool, ood_pool, n: int, seed):
    """Uniform subsets without replacement of both pools, deterministic per
    seed; n is clipped (with a warning) to the pool size."""
    rng = np.random.default_rng(seed)
    id_subset = _subsample(np.asarray(id_pool), n, rng)
    ood_subset = _subsample(np.asarray(ood_pool), n, rng)
    return id_subset, ood_subset


def _resolve_params(checkpoint):
    if isinstance(checkpoint, variational_net.VariationalParams):
        return checkpoint
    params, _ = variational_net.load_checkpoint(checkpoint)
    return params


def run_benchmark(checkpoint, id_dataset, ood_datasets, n_models: int, n: int,
                  epsilon: float = scores.DEFAULT_EPSILON, seed: int = 0,
                  score_names=None, dump_dir=None, config_echo=None) -> OodReport:
    """Evaluate every registered score on (id_dataset vs each OoD dataset).

    One shared set of n_models weight samples (derived from ``seed``) scores
    all datasets, so the same sampled ensemble is compared across rows.  A
    failing OoD dataset is recorded under ``errors`` and the run continues.
    When ``dump_dir`` is set, per-dataset score CSVs are written there for
    histogram plots.
    """
    params = _resolve_params(checkpoint)
    children = np.random.SeedSequence(seed).spawn(2 + len(ood_datasets))
    weight_seed = int(children[0].generate_state(1)[0])

    id_inputs = _subsample(np.asarray(id_dataset.inputs), n,
                           np.random.default_rng(children[1]))
    pl_id = posterior.sample_posterior_logits(params, id_inputs, n_models, weight_seed)
    id_scores = scores.compute_all_scores(pl_id, epsilon, score_names)

    config_echo = dict(config_echo or {})
    meta = {
        "M": n_models,
        "config": config_echo,
        "epsilon": epsilon,
        "in_dataset": id_dataset.tag,
        "n_requested": n,
        "seed": seed,
    }
    report = OodReport(rows=[], errors=[], meta=meta)
    if dump_dir is not None:
        os.makedirs(dump_dir, exist_ok=True)
        scores.write_scores_csv(
            id_scores, os.path.join(dump_dir, f"scores_{id_dataset.tag}.csv"),
            id_dataset.tag, config_echo)

    for i, ood_dataset in enumerate(ood_datasets):
        try:
            ood_inputs = _subsample(np.asarray(ood_dataset.inputs), n,
                                    np.random.default_rng(children[2 + i]))
            pl_ood = posterior.sample_posterior_logits(params, ood_inputs,
                                                       n_models, weight_seed)
            ood_scores = scores.compute_all_scores(pl_ood, epsilon, score_names)
            if dump_dir is not None:
                scores.write_scores_csv(
                    ood_scores,
                    os.path.join(dump_dir, f"scores_{ood_dataset.tag}.csv"),
                    ood_dataset.tag, config_echo)
            for name in ood_scores:
                pair = orient(EvalPair(id_scores[name].values,
                                       ood_scores[name].values,
                                       name, ood_scores[name].orientation))
                report.rows.append({
                    "in_dataset": id_dataset.tag,
                    "out_dataset": ood_dataset.tag,
                    "score_name": name,
                    "auroc_pct": round(100.0 * auroc(pair), 2),
                    "fnr95_pct": round(100.0 * fnr_at_95_tnr(pair), 2),
                    "n_id": int(pl_id.n_inputs),
                    "n_ood": int(pl_ood.n_inputs),
                    "M": n_models,
                    "seed": seed,
                })
        except (BnnoodError, ValueError) as exc:
            report.errors.append({"dataset": ood_dataset.tag, "error": str(exc)})
    return report


def format_report_table(report: OodReport) -> str:
    """Aligned text table: one row per OoD dataset, AUROC then FNR95 columns
    per score, percentages with two decimals."""
    name_order = [n for n in scores.SCORE_NAMES
                  if any(r["score_name"] == n for r in report.rows)]
    meta = report.meta
    lines = [f"in-distribution: {meta.get('in_dataset')}   M={meta.get('M')}   "
             f"n={meta.get('n_requested')}   seed={meta.get('seed')}"]
    header = (["OoD dataset"] + [f"AUROC {n}" for n in name_order]
              + [f"FNR95 {n}" for n in name_order])
    table = [header]
    for out_name in dict.fromkeys(r["out_dataset"] for r in report.rows):
        by_score = {r["score_name"]: r for r in report.rows
                    if r["out_dataset"] == out_name}
        row = [out_name]
        row += [f"{by_score[n]['auroc_pct']:.2f}" if n in by_score else "-"
                for n in name_order]
        row += [f"{by_score[n]['fnr95_pct']:.2f}" if n in by_score else "-"
                for n in name_order]
        table.append(row)
    widths = [max(len(row[col]) for row in table) for col in range(len(header))]
    for row in table:
        lines.append("  ".join(cell.rjust(w) for cell, w in zip(row, widths)))
    for err in report.errors:
        lines.append(f"error [{err['dataset']}]: {err['error']}")
    return "\n".join(lines) + "\n"


def write_ood_report(report: OodReport, out_dir, stem: str = "ood_report"):
    """Write <out_dir>/<stem>.json and .txt; both embed the run config and
    contain no timestamps."""
    os.makedirs(out_dir, exist_ok=True)
    json_path = os.path.join(out_dir, f"{stem}.json")
    txt_path = os.path.join(out_dir, f"{stem}.txt")
    payload = {"errors": report.errors, "meta": report.meta, "rows": report.rows}
    with open(json_path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(txt_path, "w") as fh:
        fh.write(format_report_table(report))
    return json_path, txt_path
