"""Sliding-window scoring and aggregation into zero-shot anomaly maps.

A window plan enumerates every fully interior k x k anchor at stride 1.
Each window's embedding is scored against the class prototypes, the
score is distributed to the covered patches, and overlapping windows are
combined per patch by a weighted harmonic mean, which biases each patch
toward its most confidently-normal window.  Per-scale maps (plus an
optional constant image-scale map) are combined the same way.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoders.base import Encoder, PatchFeatureMap, WindowMask
from .errors import ContractError, CoverageError
from .prompts import ClassPrototypes, zero_shot_score

SCORE_FLOOR = 1e-8


@dataclass(frozen=True)
class WindowPlan:
    grid: tuple
    kernel: int
    masks: tuple

    @property
    def anchor_grid(self) -> tuple:
        gh, gw = self.grid
        k = self.kernel
        return (gh - k + 1, gw - k + 1)

    @property
    def n_windows(self) -> int:
        h, w = self.anchor_grid
        return h * w


@dataclass(frozen=True)
class ScoreMap:
    values: np.ndarray
    kind: str = "patch"  # "patch" | "pixel"

    def __post_init__(self):
        arr = np.asarray(self.values)
        if not np.all(np.isfinite(arr)):
            raise ContractError("score map contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ContractError(f"score map range [{arr.min()}, {arr.max()}] outside [0, 1]")


@dataclass(frozen=True)
class ScaleSet:
    """Window kernels for the small and mid scales plus the image scale flag."""

    kernels: tuple = (2, 3)
    include_image_scale: bool = True

    def validate(self, grid: tuple) -> None:
        for k in self.kernels:
            if k < 1 or k > min(grid):
                raise ContractError(f"kernel {k} outside [1, {min(grid)}] for grid {grid}")

    @property
    def small(self) -> int:
        return self.kernels[0]

    @property
    def mid(self) -> int:
        return self.kernels[1] if len(self.kernels) > 1 else self.kernels[0]


@dataclass(frozen=True)
class CropScheme:
    """Fractional (top, left, bottom, right) crop boxes averaged at scoring."""

    name: str = "single"
    boxes: tuple = ((0.0, 0.0, 1.0, 1.0),)


def five_crop_scheme(scale: float = 0.9) -> CropScheme:
    """Center plus four corner crops at a linear scale of the full image."""
    s = scale
    c = (1.0 - s) / 2.0
    boxes = (
        (c, c, c + s, c + s),
        (0.0, 0.0, s, s),
        (0.0, 1.0 - s, s, 1.0),
        (1.0 - s, 0.0, 1.0, s),
        (1.0 - s, 1.0 - s, 1.0, 1.0),
    )
    return CropScheme(name=f"five_crop:{scale}", boxes=boxes)


CROP_SCHEMES = {
    "single": CropScheme(),
    "five_crop": five_crop_scheme(),
}


def gen_windows(grid: tuple, kernel: int) -> WindowPlan:
    """All k x k windows at stride 1 over fully interior anchors, row-major."""
    gh, gw = grid
    if kernel < 1 or kernel > min(gh, gw):
        raise ContractError(f"kernel {kernel} outside [1, {min(gh, gw)}] for grid {grid}")
    masks = tuple(
        WindowMask(anchor=(i, j), kernel=kernel, grid=(gh, gw))
        for i in range(gh - kernel + 1)
        for j in range(gw - kernel + 1)
    )
    return WindowPlan(grid=(gh, gw), kernel=kernel, masks=masks)


def window_scores(features: PatchFeatureMap, prototypes: ClassPrototypes) -> np.ndarray:
    """Anomaly probability per window embedding (anchor-grid array)."""
    values = features.values
    if values.shape[-1] != prototypes.normal.shape[0]:
        raise ContractError(
            f"feature dim {values.shape[-1]} != prototype dim {prototypes.normal.shape[0]}"
        )
    h, w, _ = values.shape
    out = np.empty((h, w))
    for i in range(h):
        for j in range(w):
            out[i, j] = zero_shot_score(values[i, j], prototypes)
    return out


def harmonic_aggregate(scores: np.ndarray, plan: WindowPlan,
                       aggregation: str = "harmonic") -> ScoreMap:
    """Combine overlapping window scores into a patch-grid map.

    scores is indexed by anchor (row-major, matching the plan).  Scores
    are clamped to [SCORE_FLOOR, 1] first so the harmonic mean is defined.
    The arithmetic mode exists for the aggregation ablation.
    """
    scores = np.asarray(scores, dtype=np.float64)
    ah, aw = plan.anchor_grid
    if scores.shape == (plan.n_windows,):
        scores = scores.reshape(ah, aw)
    if scores.shape != (ah, aw):
        raise ContractError(f"scores shape {scores.shape} != anchor grid {(ah, aw)}")
    if aggregation not in ("harmonic", "arithmetic"):
        raise ContractError(f"unknown aggregation {aggregation!r}")
    clamped = np.clip(scores, SCORE_FLOOR, 1.0)
    gh, gw = plan.grid
    k = plan.kernel
    acc = np.zeros((gh, gw))
    cover = np.zeros((gh, gw))
    contribution = 1.0 / clamped if aggregation == "harmonic" else clamped
    for di in range(k):
        for dj in range(k):
            acc[di:di + ah, dj:dj + aw] += contribution
            cover[di:di + ah, dj:dj + aw] += 1.0
    if np.any(cover == 0):
        raise CoverageError("window plan leaves patches uncovered")
    if aggregation == "harmonic":
        values = cover / acc
    else:
        values = acc / cover
    return ScoreMap(values=np.clip(values, 0.0, 1.0), kind="patch")


def combine_maps(maps, aggregation: str = "harmonic") -> ScoreMap:
    """Pixel-wise equal-weight harmonic (or arithmetic) mean of score maps."""
    if not maps:
        raise ContractError("need at least one map to combine")
    arrays = [np.asarray(m.values if isinstance(m, ScoreMap) else m, dtype=np.float64)
              for m in maps]
    shape = arrays[0].shape
    for arr in arrays:
        if arr.shape != shape:
            raise ContractError(f"map shapes differ: {arr.shape} vs {shape}")
    stack = np.stack(arrays)
    if aggregation == "harmonic":
        values = len(arrays) / np.sum(1.0 / np.clip(stack, SCORE_FLOOR, 1.0), axis=0)
    elif aggregation == "arithmetic":
        values = stack.mean(axis=0)
    else:
        raise ContractError(f"unknown aggregation {aggregation!r}")
    return ScoreMap(values=np.clip(values, 0.0, 1.0), kind=maps[0].kind if isinstance(maps[0], ScoreMap) else "patch")


def bilinear_resize(values: np.ndarray, out_hw: tuple) -> np.ndarray:
    """Bilinear resampling treating entries as samples at cell centers."""
    src = np.asarray(values, dtype=np.float64)
    h, w = src.shape
    out_h, out_w = out_hw
    if out_h == h and out_w == w:
        return src.copy()
    ys = (np.arange(out_h) + 0.5) * h / out_h - 0.5
    xs = (np.arange(out_w) + 0.5) * w / out_w - 0.5
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = src[np.ix_(y0, x0)] * (1 - wx) + src[np.ix_(y0, x1)] * wx
    bottom = src[np.ix_(y1, x0)] * (1 - wx) + src[np.ix_(y1, x1)] * wx
    return top * (1 - wy) + bottom * wy


def upsample_map(score_map: ScoreMap, target_hw: tuple) -> ScoreMap:
    """Patch-grid map to pixel map via center-aligned bilinear interpolation."""
    h, w = score_map.values.shape
    th, tw = target_hw
    if th < h or tw < w:
        raise ContractError(f"target {target_hw} smaller than grid {(h, w)}")
    values = np.clip(bilinear_resize(score_map.values, (th, tw)), 0.0, 1.0)
    return ScoreMap(values=values, kind="pixel")


def scale_map(img: np.ndarray, encoder: Encoder, prototypes: ClassPrototypes,
              kernel: int, aggregation: str = "harmonic") -> ScoreMap:
    """Zero-shot map for one window scale on the patch grid."""
    plan = gen_windows(tuple(encoder.config.grid), kernel)
    features = encoder.encode_windows_batched(img, list(plan.masks))
    scores = window_scores(features, prototypes)
    return harmonic_aggregate(scores, plan, aggregation=aggregation)


def multiscale_zero_shot_map(img: np.ndarray, encoder: Encoder,
                             prototypes: ClassPrototypes,
                             scales: ScaleSet = None,
                             aggregation: str = "harmonic",
                             return_components: bool = False):
    """Combined zero-shot segmentation map over all configured scales."""
    scales = scales or ScaleSet()
    scales.validate(tuple(encoder.config.grid))
    components = {}
    for k in scales.kernels:
        components[f"window:{k}"] = scale_map(img, encoder, prototypes, k, aggregation)
    if scales.include_image_scale:
        score = zero_shot_score(encoder.encode_image_global(img), prototypes)
        gh, gw = encoder.config.grid
        components["image"] = ScoreMap(values=np.full((gh, gw), score), kind="patch")
    combined = combine_maps(list(components.values()), aggregation=aggregation)
    if return_components:
        return combined, components
    return combined


def patch_token_map(img: np.ndarray, encoder: Encoder,
                    prototypes: ClassPrototypes) -> ScoreMap:
    """Per-patch zero-shot scores on the penultimate features (baseline)."""
    features = encoder.encode_patches(img)
    return ScoreMap(values=window_scores(features, prototypes), kind="patch")


def _crop_resize(img: np.ndarray, box, resolution: int) -> np.ndarray:
    from .data import resize_chw

    _, h, w = img.shape
    top = int(round(box[0] * h))
    left = int(round(box[1] * w))
    bottom = int(round(box[2] * h))
    right = int(round(box[3] * w))
    crop = img[:, top:bottom, left:right]
    if crop.shape[1] == resolution and crop.shape[2] == resolution:
        return np.asarray(crop, dtype=np.float64)
    return np.asarray(resize_chw(crop, (resolution, resolution)), dtype=np.float64)


def zero_shot_classify(img: np.ndarray, encoder: Encoder,
                       prototypes: ClassPrototypes,
                       multicrop: CropScheme = None) -> float:
    """Image-level anomaly probability, averaged over the crop scheme."""
    scheme = multicrop or CropScheme()
    res = encoder.config.input_resolution
    scores = []
    for box in scheme.boxes:
        view = _crop_resize(img, box, res)
        scores.append(zero_shot_score(encoder.encode_image_global(view), prototypes))
    return float(np.mean(scores))
