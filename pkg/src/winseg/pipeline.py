"""End-to-end workflows: scoring, evaluation protocol and benchmarking.

These functions glue the encoder, prompt, window, memory and metric
modules together for whole images (including the tiling path for
non-square inputs) and whole datasets (the K-shot, multi-seed protocol).
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import data as data_mod
from . import memory as memory_mod
from . import metrics as metrics_mod
from . import prompts as prompts_mod
from . import windows as windows_mod
from .encoders.base import Encoder
from .errors import ConfigError, ContractError


@dataclass
class RunConfig:
    """Everything needed to reproduce a run; embedded into every report."""

    model: str = "reference:0"
    object_label: str = None          # None: per-category label from the manifest
    lexicon_path: str = None
    lexicon_preset: str = "default"   # default | baseline
    template_preset: str = "default"  # default | identity
    kernels: tuple = (2, 3)
    include_image_scale: bool = True
    tau: float = prompts_mod.DEFAULT_TEMPERATURE
    multicrop: str = "single"
    fusion_weight: float = 0.5        # weight of the language map in AS fusion
    language: bool = True             # language-guided paths on/off
    memory_scales: tuple = None       # None: all of patch/window banks
    k_shots: int = 0
    seeds: tuple = (0, 1, 2, 3, 4)
    layout: str = "mvtec"
    root: str = None
    out: str = None
    jobs: int = 1
    aggregation: str = "harmonic"
    per_image_pixel_metrics: bool = False

    def scale_set(self) -> windows_mod.ScaleSet:
        return windows_mod.ScaleSet(kernels=tuple(self.kernels),
                                    include_image_scale=self.include_image_scale)

    def crop_scheme(self) -> windows_mod.CropScheme:
        if self.multicrop not in windows_mod.CROP_SCHEMES:
            raise ConfigError(f"unknown crop scheme {self.multicrop!r}; "
                              f"have {sorted(windows_mod.CROP_SCHEMES)}")
        return windows_mod.CROP_SCHEMES[self.multicrop]

    def prompt_parts(self):
        if self.lexicon_path:
            return prompts_mod.load_lexicon_file(self.lexicon_path)
        if self.lexicon_preset == "default":
            lexicon = prompts_mod.StateLexicon()
        elif self.lexicon_preset == "baseline":
            lexicon = prompts_mod.BASELINE_LEXICON
        else:
            raise ConfigError(f"unknown lexicon preset {self.lexicon_preset!r}")
        if self.template_preset == "default":
            templates = prompts_mod.TemplateSet()
        elif self.template_preset == "identity":
            templates = prompts_mod.TemplateSet(templates=tuple(prompts_mod.IDENTITY_TEMPLATES))
        else:
            raise ConfigError(f"unknown template preset {self.template_preset!r}")
        return lexicon, templates

    def as_dict(self) -> dict:
        out = asdict(self)
        out["kernels"] = list(self.kernels)
        out["seeds"] = list(self.seeds)
        if self.memory_scales is not None:
            out["memory_scales"] = list(self.memory_scales)
        return out

    def validate_against(self, encoder: Encoder) -> None:
        self.scale_set().validate(tuple(encoder.config.grid))
        if encoder.config.input_resolution % encoder.config.patch_size:
            raise ConfigError("resolution must be divisible by the patch size")


def make_prototypes(encoder: Encoder, config: RunConfig,
                    object_label: str) -> prompts_mod.ClassPrototypes:
    lexicon, templates = config.prompt_parts()
    composed = prompts_mod.compose_prompts(object_label or "object", lexicon, templates)
    return prompts_mod.build_prototypes(composed, encoder, temperature=config.tau)


@dataclass
class QueryResult:
    ascore: float
    pixel_map: np.ndarray = None      # at the original image dims
    original_size: tuple = None


def _score_square_tile(tile: np.ndarray, encoder: Encoder, config: RunConfig,
                       prototypes, memory, with_map: bool):
    """Score one encoder-resolution tile; returns (ascore, pixel map | None)."""
    res = encoder.config.input_resolution
    scales = config.scale_set()
    if memory is not None:
        fused = memory_mod.segment_plus(
            tile, memory, encoder,
            prototypes=prototypes if config.language else None,
            scales=scales,
            target_hw=(res, res),
            language_weight=config.fusion_weight if config.language else 0.0,
            use_scales=config.memory_scales,
        )
        return fused.ascore, (fused.segmentation.values if with_map else None)
    if prototypes is None:
        raise ContractError("zero-shot scoring requires prototypes")
    ascore = windows_mod.zero_shot_classify(tile, encoder, prototypes,
                                            multicrop=config.crop_scheme())
    pixel = None
    if with_map:
        patch_map = windows_mod.multiscale_zero_shot_map(
            tile, encoder, prototypes, scales, aggregation=config.aggregation)
        pixel = windows_mod.upsample_map(patch_map, (res, res)).values
    return ascore, pixel


def score_query(pre: data_mod.PreprocessedImage, encoder: Encoder, config: RunConfig,
                prototypes=None, memory=None, with_map: bool = True) -> QueryResult:
    """Score one preprocessed image, tiling the long axis when non-square."""
    tensor = np.asarray(pre.tensor, dtype=np.float64)
    _, h, w = tensor.shape
    res = encoder.config.input_resolution
    if min(h, w) != res:
        raise ContractError(f"preprocessed shorter edge {min(h, w)} != encoder resolution {res}")
    plan = data_mod.plan_tiles((h, w), side=res)
    tile_maps = []
    tile_scores = []
    for box in plan.boxes:
        tile = data_mod.extract_tile(tensor, box)
        ascore, pixel = _score_square_tile(tile, encoder, config, prototypes,
                                           memory, with_map)
        tile_scores.append(ascore)
        tile_maps.append(pixel)
    if with_map:
        merged, score = data_mod.merge_tile_predictions(tile_maps, tile_scores, plan)
        final_map = np.clip(windows_mod.bilinear_resize(merged, pre.original_size), 0.0, 1.0)
    else:
        score = float(np.mean(tile_scores))
        final_map = None
    return QueryResult(ascore=float(score), pixel_map=final_map,
                       original_size=pre.original_size)


def build_reference_memory(ref_paths, encoder: Encoder, config: RunConfig,
                           seed: int = None) -> memory_mod.ReferenceMemory:
    """Preprocess references (expanding non-square ones into tiles) and store."""
    res = encoder.config.input_resolution
    tiles = []
    for path in ref_paths:
        pre = data_mod.preprocess(path, data_mod.PreprocessSpec(target=res))
        tensor = np.asarray(pre.tensor, dtype=np.float64)
        plan = data_mod.plan_tiles(tensor.shape[1:], side=res)
        tiles.extend(data_mod.extract_tile(tensor, box) for box in plan.boxes)
    return memory_mod.build_memory(tiles, encoder, scales=config.scale_set(),
                                   reference_ids=tuple(str(p) for p in ref_paths),
                                   seed=seed)


# ---------------------------------------------------------------------------
# dataset evaluation

IMAGE_METRICS = ("auroc", "aupr", "f1_max")
PIXEL_METRICS = ("pauroc", "pro", "pf1_max")


def _pixel_metrics_pooled(seg_pairs) -> dict:
    pooled_scores = np.concatenate([p.prediction.ravel() for p in seg_pairs])
    pooled_labels = np.concatenate([p.mask.ravel() for p in seg_pairs])
    pooled = metrics_mod.LabeledScores(scores=pooled_scores, labels=pooled_labels)
    return {
        "pauroc": metrics_mod.auroc(pooled),
        "pro": metrics_mod.pro(seg_pairs),
        "pf1_max": metrics_mod.f1_max(pooled)["score"],
    }


def _pixel_metrics_per_image(seg_pairs) -> dict:
    """Average per-image values; images without defect pixels are skipped."""
    values = {"pauroc": [], "pro": [], "pf1_max": []}
    for pair in seg_pairs:
        if not pair.mask.any():
            continue
        scores = metrics_mod.LabeledScores(
            scores=np.asarray(pair.prediction, dtype=np.float64).ravel(),
            labels=pair.mask.ravel())
        values["pauroc"].append(metrics_mod.auroc(scores))
        values["pro"].append(metrics_mod.pro([pair]))
        values["pf1_max"].append(metrics_mod.f1_max(scores)["score"])
    if not values["pauroc"]:
        raise ContractError("per-image pixel metrics need >= 1 anomalous image")
    return {k: float(np.mean(v)) for k, v in values.items()}


def _category_metrics(ascores, labels, seg_pairs, per_image: bool = False) -> dict:
    labeled = metrics_mod.LabeledScores.from_pairs(ascores, labels)
    out = {
        "auroc": metrics_mod.auroc(labeled),
        "aupr": metrics_mod.aupr(labeled),
        "f1_max": metrics_mod.f1_max(labeled)["score"],
    }
    if seg_pairs:
        pixel = (_pixel_metrics_per_image(seg_pairs) if per_image
                 else _pixel_metrics_pooled(seg_pairs))
        out.update(pixel)
    return out


def _evaluate_category(manifest, category: str, encoder: Encoder,
                       config: RunConfig, shots: int, seeds) -> dict:
    cat = manifest.category(category)
    spec = data_mod.PreprocessSpec(target=encoder.config.input_resolution)
    prototypes = None
    if config.language or shots == 0:
        label = config.object_label or cat.object_label
        prototypes = make_prototypes(encoder, config, label)

    preprocessed = [data_mod.preprocess(t.path, spec) for t in cat.test]
    masks = [data_mod.load_mask(t.mask_path) if t.mask_path else None for t in cat.test]
    labels = [t.label for t in cat.test]

    def run_pass(memory):
        ascores = []
        seg_pairs = []
        for pre, mask, record in zip(preprocessed, masks, cat.test):
            result = score_query(pre, encoder, config, prototypes=prototypes,
                                 memory=memory, with_map=True)
            ascores.append(result.ascore)
            gt = mask if mask is not None else np.zeros(pre.original_size, dtype=bool)
            seg_pairs.append(metrics_mod.SegPair(prediction=result.pixel_map, mask=gt))
        return _category_metrics(ascores, labels, seg_pairs,
                                 per_image=config.per_image_pixel_metrics)

    per_metric = {}
    if shots == 0:
        values = run_pass(memory=None)
        for metric, value in values.items():
            per_metric[metric] = [value for _ in seeds]
    else:
        for seed in seeds:
            refs = data_mod.sample_references(manifest, category, shots, seed)
            memory = build_reference_memory(refs, encoder, config, seed=seed)
            values = run_pass(memory)
            for metric, value in values.items():
                per_metric.setdefault(metric, []).append(value)
    return per_metric


def evaluate_dataset(manifest, encoder: Encoder, config: RunConfig, shots: int,
                     seeds=None, categories=None) -> metrics_mod.EvalReport:
    """Run the evaluation protocol at a shot count over the seed list.

    Zero-shot passes are deterministic, so they are computed once and
    replicated across seeds (matching their zero spread in reports).
    """
    seeds = list(seeds if seeds is not None else config.seeds)
    config.validate_against(encoder)
    names = sorted(categories or manifest.categories)
    results = {}

    def work(name):
        return name, _evaluate_category(manifest, name, encoder, config, shots, seeds)

    if config.jobs > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            for name, values in pool.map(work, names):
                results[name] = values
    else:
        for name in names:
            results[name] = work(name)[1]

    run_meta = dict(config.as_dict(), shots=shots, seeds=seeds,
                    encoder_fingerprint=encoder.fingerprint())
    return metrics_mod.aggregate_runs(results, seeds, config=run_meta)


# ---------------------------------------------------------------------------
# benchmarking

BENCH_CONFIGS = (
    "patch_token",
    "image_tiling",
    "windowed",
    "no_image_scale",
    "no_mid_scale",
    "no_small_scale",
    "no_harmonic",
)


def naive_tiling_map(img: np.ndarray, encoder: Encoder, prototypes,
                     kernel: int) -> windows_mod.ScoreMap:
    """Baseline: materialize each window as a resized crop, full forward each.

    Produces the same anchor grid as the windowed path but pays a full
    token sequence (plus a resize) per window.
    """
    res = encoder.config.input_resolution
    p = encoder.config.patch_size
    plan = windows_mod.gen_windows(tuple(encoder.config.grid), kernel)
    scores = np.empty(plan.anchor_grid)
    for mask in plan.masks:
        i, j = mask.anchor
        crop = img[:, i * p:(i + kernel) * p, j * p:(j + kernel) * p]
        view = np.asarray(data_mod.resize_chw(crop, (res, res)), dtype=np.float64)
        embedding = encoder.encode_image_global(view)
        scores[i, j] = prompts_mod.zero_shot_score(embedding, prototypes)
    return windows_mod.harmonic_aggregate(scores, plan)


def _bench_once(name: str, img: np.ndarray, encoder: Encoder, prototypes,
                config: RunConfig) -> None:
    scales = config.scale_set()
    if name == "patch_token":
        windows_mod.patch_token_map(img, encoder, prototypes)
    elif name == "image_tiling":
        maps = [naive_tiling_map(img, encoder, prototypes, k) for k in scales.kernels]
        windows_mod.combine_maps(maps)
    elif name == "windowed":
        windows_mod.multiscale_zero_shot_map(img, encoder, prototypes, scales)
    elif name == "no_image_scale":
        windows_mod.multiscale_zero_shot_map(
            img, encoder, prototypes,
            windows_mod.ScaleSet(kernels=scales.kernels, include_image_scale=False))
    elif name == "no_mid_scale":
        windows_mod.multiscale_zero_shot_map(
            img, encoder, prototypes,
            windows_mod.ScaleSet(kernels=(scales.small,),
                                 include_image_scale=scales.include_image_scale))
    elif name == "no_small_scale":
        windows_mod.multiscale_zero_shot_map(
            img, encoder, prototypes,
            windows_mod.ScaleSet(kernels=(scales.mid,),
                                 include_image_scale=scales.include_image_scale))
    elif name == "no_harmonic":
        windows_mod.multiscale_zero_shot_map(img, encoder, prototypes, scales,
                                             aggregation="arithmetic")
    else:
        raise ConfigError(f"unknown bench config {name!r}; have {BENCH_CONFIGS}")


def bench(encoder: Encoder, config: RunConfig, configs=None, n_images: int = 3,
          repeats: int = 2, seed: int = 0) -> list:
    """Latency and token-work rows for the segmentation ablations."""
    configs = list(configs or BENCH_CONFIGS)
    res = encoder.config.input_resolution
    rng = np.random.Generator(np.random.PCG64(seed))
    images = [rng.standard_normal((3, res, res)) for _ in range(n_images)]
    prototypes = make_prototypes(encoder, config, config.object_label or "object")
    rows = []
    for name in configs:
        times = []
        tokens = []
        for img in images:
            best = None
            for _ in range(repeats):
                encoder.token_work.reset()
                start = time.perf_counter()
                _bench_once(name, img, encoder, prototypes, config)
                elapsed = (time.perf_counter() - start) * 1000.0
                best = elapsed if best is None else min(best, elapsed)
            tokens.append(encoder.token_work.value)
            times.append(best)
        rows.append({
            "config": name,
            "mean_ms": float(np.mean(times)),
            "std_ms": float(np.std(times)),
            "tokens_per_image": int(np.mean(tokens)),
        })
    return rows
