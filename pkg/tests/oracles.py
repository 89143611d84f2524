"""Brute-force reference implementations the production paths are checked against.

Everything here favours the most literal possible formulation: explicit
loops over pixels, windows, bank entries, sample pairs and thresholds.
"""

import numpy as np


def harmonic_oracle(scores, plan, floor=1e-8):
    """Per-pixel weighted harmonic mean over covering windows, O(pixels*windows)."""
    gh, gw = plan.grid
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    out = np.zeros((gh, gw))
    for i in range(gh):
        for j in range(gw):
            weight_sum = 0.0
            reciprocal_sum = 0.0
            for mask, value in zip(plan.masks, scores):
                ai, aj = mask.anchor
                k = mask.kernel
                covered = ai <= i < ai + k and aj <= j < aj + k
                if covered:
                    weight_sum += 1.0
                    reciprocal_sum += 1.0 / min(max(value, floor), 1.0)
            assert weight_sum > 0, f"pixel ({i},{j}) uncovered"
            out[i, j] = weight_sum / reciprocal_sum
    return out


def associate_oracle(features, bank):
    """Exhaustive min over the bank per position; einsum per pair."""
    values = features.values
    h, w, _ = values.shape
    out = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            best = None
            for entry in bank:
                score = 0.5 * (1.0 - float(np.einsum("d,d->", values[i, j], entry)))
                if best is None or score < best:
                    best = score
            out[i, j] = min(max(best, 0.0), 1.0)
    return out


def auroc_oracle(scores, labels):
    """Exhaustive pair counting, ties worth one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    pos = scores[labels]
    neg = scores[~labels]
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(pos) * len(neg))


def aupr_oracle(scores, labels):
    """Precision at every achieved recall level, summed over recall steps."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    n_pos = int(labels.sum())
    area = 0.0
    prev_recall = 0.0
    for t in sorted(set(scores), reverse=True):
        predicted = scores >= t
        tp = int((predicted & labels).sum())
        fp = int((predicted & ~labels).sum())
        recall = tp / n_pos
        precision = tp / (tp + fp)
        area += (recall - prev_recall) * precision
        prev_recall = recall
    return area


def f1_oracle(scores, labels):
    """Full threshold sweep; returns (best f1, smallest optimal threshold)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    n_pos = int(labels.sum())
    best = -1.0
    best_t = None
    for t in sorted(set(scores)):
        predicted = scores >= t
        tp = int((predicted & labels).sum())
        fp = int((predicted & ~labels).sum())
        fn = n_pos - tp
        denom = 2 * tp + fp + fn
        f1 = 2 * tp / denom if denom else 0.0
        if f1 > best or (f1 == best and (best_t is None or t < best_t)):
            best = f1
            best_t = t
    return best, best_t


def _regions_8(mask):
    """8-connected components by flood fill; no library helpers."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    seen = np.zeros_like(mask)
    regions = []
    for si in range(h):
        for sj in range(w):
            if not mask[si, sj] or seen[si, sj]:
                continue
            stack = [(si, sj)]
            seen[si, sj] = True
            coords = []
            while stack:
                i, j = stack.pop()
                coords.append((i, j))
                for di in (-1, 0, 1):
                    for dj in (-1, 0, 1):
                        ni, nj = i + di, j + dj
                        if 0 <= ni < h and 0 <= nj < w and mask[ni, nj] and not seen[ni, nj]:
                            seen[ni, nj] = True
                            stack.append((ni, nj))
            regions.append(coords)
    return regions


def pro_oracle(pairs, fpr_limit=0.3, n_thresholds=200):
    """Literal threshold sweep of the region-overlap curve, trapezoid area."""
    regions = []
    for idx, pair in enumerate(pairs):
        for coords in _regions_8(pair.mask):
            regions.append((idx, coords))
    n_neg = sum(int((~p.mask).sum()) for p in pairs)
    scores = np.concatenate([np.asarray(p.prediction, dtype=np.float64).ravel()
                             for p in pairs])
    lo, hi = scores.min(), scores.max()
    thresholds = np.linspace(hi, lo, n_thresholds) if hi > lo else [lo]

    points = []
    for t in thresholds:
        overlaps = []
        for idx, coords in regions:
            pred = np.asarray(pairs[idx].prediction, dtype=np.float64)
            hit = sum(1 for (i, j) in coords if pred[i, j] >= t)
            overlaps.append(hit / len(coords))
        fp = 0
        for pair in pairs:
            pred = np.asarray(pair.prediction, dtype=np.float64)
            h, w = pred.shape
            for i in range(h):
                for j in range(w):
                    if pred[i, j] >= t and not pair.mask[i, j]:
                        fp += 1
        points.append((fp / n_neg, float(np.mean(overlaps))))

    best = {}
    for fpr, value in points:
        best[fpr] = max(value, best.get(fpr, 0.0))
    xs = [0.0] + sorted(best)
    ys = [0.0] + [best[x] for x in sorted(best)]
    area = 0.0
    for i in range(1, len(xs)):
        x0, x1, y0, y1 = xs[i - 1], xs[i], ys[i - 1], ys[i]
        if x0 >= fpr_limit:
            break
        if x1 > fpr_limit:
            y1 = y0 + (y1 - y0) * (fpr_limit - x0) / (x1 - x0)
            x1 = fpr_limit
        area += 0.5 * (y0 + y1) * (x1 - x0)
    return area / fpr_limit
