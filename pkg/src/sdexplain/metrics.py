"""Explanation-quality metrics: AUC, SPA, FID⁻/FID⁺, ACC.

Programmatic values are fractions in [0, 1]; report writers convert to
percent.  AUC is computed on symmetrized scores with one entry per
undirected bond, pooled over a whole split.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .graphs import Dataset, Graph, check_mask, symmetrize_mask
from .models import SiGnnModel, compute_edge_scores, predict


def _midranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties averaged."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x), dtype=np.float64)
    sx = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def auc(scores: np.ndarray, labels: np.ndarray) -> float | None:
    """Mann–Whitney AUC with half-credit for ties.

    Returns None when only one class is present.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(int)
    if scores.shape != labels.shape:
        raise ConfigError("scores and labels must have the same length")
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        return None
    r = _midranks(scores)
    pos_rank_sum = float(r[labels == 1].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def spa(mask: np.ndarray) -> float:
    """Mean edge activation (soft sparsity); lower is more concise."""
    m = np.asarray(mask, dtype=np.float64)
    if m.size == 0:
        raise ConfigError("spa needs a non-empty mask")
    return float(m.mean())


def fid_minus(model: SiGnnModel, graph: Graph, mask: np.ndarray) -> int:
    """1 when restricting to the masked graph changes the predicted class."""
    full = predict(model, graph, np.ones(graph.edge_count))
    masked = predict(model, graph, mask)
    return int(masked.predicted_class != full.predicted_class)


def fid_plus(model: SiGnnModel, graph: Graph, mask: np.ndarray) -> int:
    """1 when removing the masked graph (weights 1−m) changes the class."""
    m = check_mask(graph, mask)
    return fid_minus(model, graph, 1.0 - m)


def acc(model: SiGnnModel, graphs_with_labels, masks) -> float:
    """Fraction of graphs classified correctly from their masked graph.

    `graphs_with_labels` is an iterable of (index, Graph); `masks` maps
    index → edge mask.
    """
    pairs = list(graphs_with_labels)
    if not pairs:
        raise ConfigError("acc needs at least one graph")
    hits = 0
    for gi, g in pairs:
        hits += int(predict(model, g, masks[gi]).predicted_class == g.label)
    return hits / len(pairs)


@dataclass(frozen=True)
class ExplanationEval:
    auc: float | None
    spa: float


@dataclass(frozen=True)
class PredictionEval:
    acc: float
    fid_minus: float
    fid_plus: float


def evaluate(model: SiGnnModel, dataset: Dataset, split: str = "test",
             masks=None) -> tuple[ExplanationEval, PredictionEval]:
    """Per-split metrics; masks default to the model's own first-pass scores.

    AUC pools symmetrized scores over every undirected bond in the split.
    """
    pairs = dataset.part_graphs(split)
    if not pairs:
        raise ConfigError(f"split {split!r} is empty")
    if masks is None:
        masks = {gi: compute_edge_scores(model, g) for gi, g in pairs}
    pooled_scores, pooled_labels = [], []
    spa_vals, fidm, fidp, hits = [], [], [], 0
    for gi, g in pairs:
        m = check_mask(g, masks[gi])
        spa_vals.append(spa(m))
        fidm.append(fid_minus(model, g, m))
        fidp.append(fid_plus(model, g, m))
        hits += int(predict(model, g, m).predicted_class == g.label)
        if g.gt_edge_labels is not None:
            rep = g.undirected_representatives
            pooled_scores.append(symmetrize_mask(g, m)[rep])
            pooled_labels.append(g.gt_edge_labels[rep])
    pooled_auc = None
    if pooled_scores:
        pooled_auc = auc(np.concatenate(pooled_scores),
                         np.concatenate(pooled_labels))
    expl = ExplanationEval(auc=pooled_auc, spa=float(np.mean(spa_vals)))
    pred = PredictionEval(acc=hits / len(pairs),
                          fid_minus=float(np.mean(fidm)),
                          fid_plus=float(np.mean(fidp)))
    return expl, pred


@dataclass(frozen=True)
class AggregateReport:
    """Mean ± std per metric over a collection of evaluations."""

    stats: dict

    def mean(self, metric: str) -> float:
        return self.stats[metric]["mean"]

    def std(self, metric: str) -> float:
        return self.stats[metric]["std"]


def aggregate(evals: list[tuple[ExplanationEval, PredictionEval]]) -> AggregateReport:
    """Pool per-model evaluations into mean/std rows (population std)."""
    if not evals:
        raise ConfigError("aggregate needs at least one evaluation")
    cols: dict[str, list[float]] = {"auc": [], "spa": [], "acc": [],
                                    "fid_minus": [], "fid_plus": []}
    for expl, pred in evals:
        if expl.auc is not None:
            cols["auc"].append(expl.auc)
        cols["spa"].append(expl.spa)
        cols["acc"].append(pred.acc)
        cols["fid_minus"].append(pred.fid_minus)
        cols["fid_plus"].append(pred.fid_plus)
    stats = {}
    for name, vals in cols.items():
        if vals:
            arr = np.asarray(vals)
            stats[name] = {"mean": float(arr.mean()),
                           "std": float(arr.std(ddof=0))}
        else:
            stats[name] = {"mean": None, "std": None}
    return AggregateReport(stats=stats)
