"""Few-shot reference memories and their fusion with language-guided maps.

Normal reference images contribute three banks of unit vectors: all
penultimate patch features plus window embeddings at the small and mid
kernels.  A query position scores half of one minus its best cosine
against a bank; per-scale maps are averaged and optionally fused with
the zero-shot map, and the image-level score averages the map peak
with the language score.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .data import read_container, write_container
from .encoders.base import Encoder, PatchFeatureMap
from .errors import ContractError
from .prompts import ClassPrototypes, zero_shot_score
from .windows import (
    ScaleSet,
    ScoreMap,
    bilinear_resize,
    gen_windows,
    multiscale_zero_shot_map,
    upsample_map,
)


@dataclass
class ReferenceMemory:
    """Per-scale banks of unit vectors harvested from K normal images."""

    patch_bank: np.ndarray        # (K * Gh * Gw, d)
    window_banks: dict            # kernel -> (K * positions, d)
    k_shots: int
    scales: ScaleSet
    reference_ids: tuple = ()
    seed: int = None
    encoder_fingerprint: str = ""

    def __post_init__(self):
        banks = [self.patch_bank, *self.window_banks.values()]
        for bank in banks:
            if bank.size == 0:
                raise ContractError("memory banks must be non-empty")
            norms = np.linalg.norm(bank, axis=-1)
            if np.max(np.abs(norms - 1.0)) > 1e-5:
                raise ContractError("memory bank vectors must be unit-norm")

    @property
    def bank_sizes(self) -> dict:
        sizes = {"patch": int(self.patch_bank.shape[0])}
        for kernel, bank in self.window_banks.items():
            sizes[f"window:{kernel}"] = int(bank.shape[0])
        return sizes


def build_memory(refs, encoder: Encoder, scales: ScaleSet = None,
                 reference_ids=(), seed: int = None) -> ReferenceMemory:
    """Collect patch and window features of every reference image.

    Order is image-major then row-major in feature positions, so the
    same references always produce byte-identical banks.
    """
    if not refs:
        raise ContractError("need at least one reference image")
    scales = scales or ScaleSet()
    grid = tuple(encoder.config.grid)
    scales.validate(grid)
    patch_rows = []
    window_rows = {k: [] for k in scales.kernels}
    for img in refs:
        patch_rows.append(encoder.encode_patches(img).flat())
        for k in scales.kernels:
            plan = gen_windows(grid, k)
            window_rows[k].append(encoder.encode_windows_batched(img, list(plan.masks)).flat())
    return ReferenceMemory(
        patch_bank=np.concatenate(patch_rows),
        window_banks={k: np.concatenate(rows) for k, rows in window_rows.items()},
        k_shots=len(refs),
        scales=scales,
        reference_ids=tuple(reference_ids),
        seed=seed,
        encoder_fingerprint=encoder.fingerprint(),
    )


def associate(features: PatchFeatureMap, bank: np.ndarray) -> ScoreMap:
    """Distance map: half of one minus the best cosine over the bank.

    Cosines are computed with einsum so a batched evaluation is
    bit-identical to scoring each (position, bank entry) pair alone.
    """
    bank = np.asarray(bank, dtype=np.float64)
    if bank.ndim != 2 or bank.shape[0] == 0:
        raise ContractError("bank must be a non-empty (n, d) array")
    values = features.values
    if values.shape[-1] != bank.shape[-1]:
        raise ContractError(f"feature dim {values.shape[-1]} != bank dim {bank.shape[-1]}")
    flat = features.flat()
    sims = np.einsum("pd,bd->pb", flat, bank)
    best = sims.max(axis=1)
    scores = 0.5 * (1.0 - best)
    h, w, _ = values.shape
    return ScoreMap(values=np.clip(scores.reshape(h, w), 0.0, 1.0), kind="patch")


def fuse_scales(patch_map: ScoreMap, small_map: ScoreMap, mid_map: ScoreMap) -> ScoreMap:
    """Equal-weight mean of the three association maps (patch-grid aligned)."""
    shape = patch_map.values.shape
    for other in (small_map, mid_map):
        if other.values.shape != shape:
            raise ContractError(f"map shapes differ: {other.values.shape} vs {shape}")
    values = (patch_map.values + small_map.values + mid_map.values) / 3.0
    return ScoreMap(values=values, kind="patch")


def _association_components(query: np.ndarray, memory: ReferenceMemory,
                            encoder: Encoder) -> dict:
    """Per-scale association maps, window scales resized to the patch grid."""
    grid = tuple(encoder.config.grid)
    components = {"patch": associate(encoder.encode_patches(query), memory.patch_bank)}
    for kernel, bank in memory.window_banks.items():
        plan = gen_windows(grid, kernel)
        features = encoder.encode_windows_batched(query, list(plan.masks))
        raw = associate(features, bank)
        aligned = np.clip(bilinear_resize(raw.values, grid), 0.0, 1.0)
        components[f"window:{kernel}"] = ScoreMap(values=aligned, kind="patch")
    return components


def association_map(query: np.ndarray, memory: ReferenceMemory, encoder: Encoder,
                    use_scales=None, return_components: bool = False):
    """Mean of the selected association maps on the patch grid."""
    components = _association_components(query, memory, encoder)
    keys = list(components) if use_scales is None else list(use_scales)
    for key in keys:
        if key not in components:
            raise ContractError(f"unknown component {key!r}; have {sorted(components)}")
    stack = np.stack([components[k].values for k in keys])
    combined = ScoreMap(values=stack.mean(axis=0), kind="patch")
    if return_components:
        return combined, components
    return combined


@dataclass
class FusedScores:
    segmentation: ScoreMap              # pixel map at the query image dims
    ascore: float                       # image-level anomaly score in [0, 1]
    memory_map: ScoreMap = None         # patch-grid association mean
    language_map: ScoreMap = None       # patch-grid zero-shot map
    components: dict = field(default_factory=dict)


def segment_plus(query: np.ndarray, memory: ReferenceMemory, encoder: Encoder,
                 prototypes: ClassPrototypes = None, scales: ScaleSet = None,
                 target_hw: tuple = None, language_weight: float = 0.5,
                 use_scales=None) -> FusedScores:
    """Few-shot segmentation plus classification for a square query tensor.

    language_weight w blends the maps as w * zero_shot + (1 - w) * memory;
    w = 0 (or no prototypes) disables the language path entirely.
    """
    if not 0.0 <= language_weight <= 1.0:
        raise ContractError(f"language weight {language_weight} outside [0, 1]")
    scales = scales or memory.scales
    memory_map, components = association_map(query, memory, encoder,
                                             use_scales=use_scales,
                                             return_components=True)
    language_map = None
    if prototypes is not None and language_weight > 0.0:
        language_map = multiscale_zero_shot_map(query, encoder, prototypes, scales)
        fused = language_weight * language_map.values + \
            (1.0 - language_weight) * memory_map.values
    else:
        fused = memory_map.values
    res = encoder.config.input_resolution
    target = target_hw or (res, res)
    pixel = upsample_map(ScoreMap(values=fused, kind="patch"), target)

    peak = float(memory_map.values.max())
    if prototypes is not None:
        language_score = zero_shot_score(encoder.encode_image_global(query), prototypes)
        ascore = 0.5 * (language_score + peak)
    else:
        ascore = peak
    return FusedScores(
        segmentation=pixel,
        ascore=ascore,
        memory_map=memory_map,
        language_map=language_map,
        components=components,
    )


def classify_plus(query: np.ndarray, memory: ReferenceMemory, encoder: Encoder,
                  prototypes: ClassPrototypes, use_scales=None) -> float:
    """Half language score plus half the association-map peak."""
    memory_map = association_map(query, memory, encoder, use_scales=use_scales)
    language_score = zero_shot_score(encoder.encode_image_global(query), prototypes)
    return 0.5 * (language_score + float(memory_map.values.max()))


# ---------------------------------------------------------------------------
# persistence

def save_memory(memory: ReferenceMemory, path: str) -> None:
    """Write banks to a tensor container plus a sidecar JSON manifest."""
    tensors = {"patch": memory.patch_bank}
    for kernel, bank in memory.window_banks.items():
        tensors[f"window:{kernel}"] = bank
    write_container(str(path), tensors)
    manifest = {
        "banks": list(tensors),
        "k_shots": memory.k_shots,
        "kernels": list(memory.scales.kernels),
        "include_image_scale": memory.scales.include_image_scale,
        "reference_ids": list(memory.reference_ids),
        "seed": memory.seed,
        "encoder_fingerprint": memory.encoder_fingerprint,
    }
    with open(f"{path}.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)


def load_memory(path: str) -> ReferenceMemory:
    tensors = read_container(str(path))
    with open(f"{path}.json", encoding="utf-8") as fh:
        manifest = json.load(fh)
    window_banks = {}
    for name in manifest["banks"]:
        if name.startswith("window:"):
            window_banks[int(name.split(":", 1)[1])] = np.asarray(tensors[name], dtype=np.float64)
    return ReferenceMemory(
        patch_bank=np.asarray(tensors["patch"], dtype=np.float64),
        window_banks=window_banks,
        k_shots=int(manifest["k_shots"]),
        scales=ScaleSet(kernels=tuple(manifest["kernels"]),
                        include_image_scale=bool(manifest["include_image_scale"])),
        reference_ids=tuple(manifest.get("reference_ids", ())),
        seed=manifest.get("seed"),
        encoder_fingerprint=manifest.get("encoder_fingerprint", ""),
    )
