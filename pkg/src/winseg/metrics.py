"""Evaluation metrics and multi-seed report aggregation.

Image-level metrics treat the anomalous class as positive.  All curve
metrics are computed from exact rank statistics or full threshold sweeps
rather than binned approximations, so they can be checked against
brute-force pair counting to float accuracy.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ContractError, DegenerateInputError

ANOMALOUS = "anomalous"
NORMAL = "normal"

EIGHT_CONNECTED = np.ones((3, 3), dtype=int)


@dataclass(frozen=True)
class LabeledScores:
    scores: np.ndarray
    labels: np.ndarray  # boolean, True == anomalous

    @classmethod
    def from_pairs(cls, scores, labels) -> "LabeledScores":
        scores = np.asarray(scores, dtype=np.float64)
        labels = np.asarray(
            [bool(l) if not isinstance(l, str) else l == ANOMALOUS for l in labels]
        )
        if scores.ndim != 1 or scores.shape != labels.shape or scores.size == 0:
            raise ContractError("scores and labels must be equal-length non-empty 1-d")
        if not np.all(np.isfinite(scores)):
            raise ContractError("scores must be finite")
        return cls(scores=scores, labels=labels)


@dataclass(frozen=True)
class SegPair:
    prediction: np.ndarray  # float scores
    mask: np.ndarray        # boolean ground truth

    def __post_init__(self):
        if self.prediction.shape != self.mask.shape:
            raise ContractError(
                f"prediction {self.prediction.shape} and mask {self.mask.shape} differ"
            )
        if self.mask.dtype != np.bool_:
            raise ContractError("mask must be boolean")


def _average_ranks(scores: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(scores.size, dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def auroc(data: LabeledScores) -> float:
    """P(random anomalous score > random normal score), ties counted half."""
    pos = data.labels
    n_pos = int(pos.sum())
    n_neg = int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise DegenerateInputError("AUROC needs both classes present")
    ranks = _average_ranks(data.scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _descending_sweep(data: LabeledScores):
    """Cumulative TP/FP after each distinct threshold, highest first.

    Yields (threshold, tp, fp) where predictions are score >= threshold.
    """
    order = np.argsort(-data.scores, kind="mergesort")
    scores = data.scores[order]
    labels = data.labels[order]
    tp = fp = 0
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and scores[j + 1] == scores[i]:
            j += 1
        tp += int(labels[i:j + 1].sum())
        fp += (j - i + 1) - int(labels[i:j + 1].sum())
        yield float(scores[i]), tp, fp
        i = j + 1


def aupr(data: LabeledScores) -> float:
    """Area under precision-recall, summed over achieved recall levels."""
    n_pos = int(data.labels.sum())
    if n_pos == 0:
        raise DegenerateInputError("AUPR needs at least one anomalous sample")
    area = 0.0
    prev_recall = 0.0
    for _, tp, fp in _descending_sweep(data):
        recall = tp / n_pos
        precision = tp / (tp + fp)
        area += (recall - prev_recall) * precision
        prev_recall = recall
    return float(area)


def f1_max(data: LabeledScores) -> dict:
    """Best anomalous-class F1 over thresholds; smallest optimal threshold."""
    n_pos = int(data.labels.sum())
    if n_pos == 0:
        raise DegenerateInputError("F1-max needs at least one anomalous sample")
    best = -1.0
    best_threshold = None
    for threshold, tp, fp in _descending_sweep(data):
        denom = 2 * tp + fp + (n_pos - tp)
        f1 = 2 * tp / denom if denom > 0 else 0.0
        if f1 >= best:
            best = f1
            best_threshold = threshold
    return {"score": float(best), "threshold": float(best_threshold)}


def pixel_auroc(pairs) -> float:
    """AUROC over all pixels of all pairs pooled together."""
    if not pairs:
        raise DegenerateInputError("need at least one prediction/mask pair")
    scores = np.concatenate([np.asarray(p.prediction, dtype=np.float64).ravel() for p in pairs])
    labels = np.concatenate([p.mask.ravel() for p in pairs])
    return auroc(LabeledScores(scores=scores, labels=labels))


def _curve_area(points, fpr_limit: float) -> float:
    """Trapezoid area under a (fpr, value) curve on [0, fpr_limit].

    Points are grouped by fpr (keeping the best value), anchored at (0, 0)
    and the last segment is cut at the limit by linear interpolation.
    """
    by_fpr = {}
    for fpr, value in points:
        by_fpr[fpr] = max(value, by_fpr.get(fpr, 0.0))
    xs = [0.0]
    ys = [0.0]
    for fpr in sorted(by_fpr):
        xs.append(fpr)
        ys.append(by_fpr[fpr])
    area = 0.0
    for i in range(1, len(xs)):
        x0, x1 = xs[i - 1], xs[i]
        y0, y1 = ys[i - 1], ys[i]
        if x0 >= fpr_limit:
            break
        if x1 > fpr_limit:
            y1 = y0 + (y1 - y0) * (fpr_limit - x0) / (x1 - x0)
            x1 = fpr_limit
        area += 0.5 * (y0 + y1) * (x1 - x0)
    return area


def pro(pairs, fpr_limit: float = 0.3, n_thresholds: int = 200) -> float:
    """Per-region overlap integrated over FPR up to fpr_limit, normalized.

    Regions are 8-connected components of the ground truth; overlaps are
    averaged over all regions of all images while FPR pools all negative
    pixels.  The curve is anchored at (0, 0) and cut at the limit by
    linear interpolation before trapezoid integration.
    """
    if not pairs:
        raise DegenerateInputError("need at least one prediction/mask pair")
    if not 0.0 < fpr_limit <= 1.0:
        raise ContractError(f"fpr limit {fpr_limit} outside (0, 1]")
    regions = []  # (pair index, region coordinate mask, region size)
    for idx, pair in enumerate(pairs):
        labeled, count = ndimage.label(pair.mask, structure=EIGHT_CONNECTED)
        for region_id in range(1, count + 1):
            region = labeled == region_id
            regions.append((idx, region, int(region.sum())))
    if not regions:
        raise DegenerateInputError("PRO needs at least one ground-truth region")
    n_neg = sum(int((~p.mask).sum()) for p in pairs)
    if n_neg == 0:
        raise DegenerateInputError("PRO needs at least one negative pixel")

    predictions = [np.asarray(p.prediction, dtype=np.float64) for p in pairs]
    all_scores = np.concatenate([pred.ravel() for pred in predictions])
    lo, hi = float(all_scores.min()), float(all_scores.max())
    thresholds = np.linspace(hi, lo, n_thresholds) if hi > lo else np.array([lo])

    points = []
    for t in thresholds:
        pred_masks = [pred >= t for pred in predictions]
        overlaps = [
            (pred_masks[idx] & region).sum() / size
            for idx, region, size in regions
        ]
        fp = sum(int((pm & ~p.mask).sum()) for pm, p in zip(pred_masks, pairs))
        points.append((fp / n_neg, float(np.mean(overlaps))))
    return float(_curve_area(points, fpr_limit) / fpr_limit)


# ---------------------------------------------------------------------------
# multi-seed reports

@dataclass
class MetricAggregate:
    mean: float
    std: float
    per_seed: list

    def as_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std, "per_seed": list(self.per_seed)}


@dataclass
class EvalReport:
    """Per-category metric table with mean and population std over seeds."""

    seeds: list
    categories: list
    metrics: list
    table: dict          # category -> metric -> MetricAggregate
    config: dict = field(default_factory=dict)

    MEAN_ROW = "Mean"

    def as_dict(self) -> dict:
        out = {
            "seeds": list(self.seeds),
            "config": self.config,
            "categories": {
                cat: {m: agg.as_dict() for m, agg in row.items()}
                for cat, row in self.table.items()
            },
        }
        return out

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.as_dict(), fh, indent=2, sort_keys=True)

    def write_csv(self, path) -> None:
        header = ["category"]
        for metric in self.metrics:
            header.extend([f"{metric}_mean", f"{metric}_std"])
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for cat in [*self.categories, self.MEAN_ROW]:
                row = [cat]
                for metric in self.metrics:
                    agg = self.table[cat][metric]
                    row.extend([f"{agg.mean:.6f}", f"{agg.std:.6f}"])
                writer.writerow(row)


def _population_std(values) -> float:
    arr = np.asarray(values, dtype=np.float64)
    return float(np.sqrt(np.mean((arr - arr.mean()) ** 2)))


def aggregate_runs(per_seed_values: dict, seeds, config: dict = None) -> EvalReport:
    """Build a report from {category: {metric: [value per seed]}}.

    Adds a synthetic "Mean" category averaging each seed's values across
    categories before the mean/std reduction, so the Mean row matches the
    per-seed protocol rather than averaging the aggregated means' stds.
    """
    if not per_seed_values:
        raise ContractError("need at least one category")
    categories = sorted(per_seed_values)
    metrics = sorted(per_seed_values[categories[0]])
    n_seeds = len(list(seeds))
    if n_seeds < 1:
        raise ContractError("need at least one seed")
    for cat in categories:
        if sorted(per_seed_values[cat]) != metrics:
            raise ContractError(f"category {cat!r} has mismatched metric set")
        for metric in metrics:
            if len(per_seed_values[cat][metric]) != n_seeds:
                raise ContractError(
                    f"category {cat!r} metric {metric!r} has "
                    f"{len(per_seed_values[cat][metric])} values for {n_seeds} seeds"
                )
    table = {}
    for cat in categories:
        table[cat] = {}
        for metric in metrics:
            vals = [float(v) for v in per_seed_values[cat][metric]]
            table[cat][metric] = MetricAggregate(
                mean=float(np.mean(vals)), std=_population_std(vals), per_seed=vals)
    mean_row = {}
    for metric in metrics:
        per_seed_mean = [
            float(np.mean([per_seed_values[cat][metric][i] for cat in categories]))
            for i in range(n_seeds)
        ]
        mean_row[metric] = MetricAggregate(
            mean=float(np.mean(per_seed_mean)),
            std=_population_std(per_seed_mean),
            per_seed=per_seed_mean,
        )
    table[EvalReport.MEAN_ROW] = mean_row
    return EvalReport(
        seeds=list(seeds),
        categories=categories,
        metrics=metrics,
        table=table,
        config=config or {},
    )
