"""Request/response models for the scoring service."""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field


class CommonOptions(BaseModel):
    """Knobs shared by scoring and evaluation requests."""

    model: Optional[str] = None
    object_label: Optional[str] = None
    lexicon_path: Optional[str] = None
    lexicon_preset: str = "default"
    template_preset: str = "default"
    kernels: list = Field(default=[2, 3])
    include_image_scale: bool = True
    tau: float = 0.01
    multicrop: str = "single"
    fusion_weight: float = 0.5
    language: bool = True
    memory_scales: Optional[list] = None
    aggregation: str = "harmonic"
    per_image_pixel_metrics: bool = False


class PromptsRequest(BaseModel):
    object_label: str = "object"
    lexicon_path: Optional[str] = None
    lexicon_preset: str = "default"
    template_preset: str = "default"


class PromptsResponse(BaseModel):
    normal: list
    anomaly: list
    n_normal: int
    n_anomaly: int


class ScoreRequest(CommonOptions):
    image_path: Optional[str] = None
    image_b64: Optional[str] = None
    memory_id: Optional[str] = None
    heatmap_path: Optional[str] = None
    return_heatmap: bool = False
    with_map: bool = True


class ScoreResponse(BaseModel):
    ascore: float
    original_size: Optional[list] = None
    heatmap_path: Optional[str] = None
    heatmap_b64: Optional[str] = None
    model_fingerprint: str = ""


class MemoryBuildRequest(CommonOptions):
    ref_paths: Optional[list] = None
    root: Optional[str] = None
    layout: str = "mvtec"
    category: Optional[str] = None
    k: int = 1
    seed: int = 0
    save_path: Optional[str] = None


class MemoryLoadRequest(BaseModel):
    path: str


class MemoryResponse(BaseModel):
    memory_id: str
    bank_sizes: dict
    k_shots: int
    seed: Optional[int] = None
    reference_ids: list = []
    encoder_fingerprint: str = ""
    save_path: Optional[str] = None


class EvalRequest(CommonOptions):
    root: str
    layout: str = "mvtec"
    shots: list = Field(default=[0])
    seeds: list = Field(default=[0, 1, 2, 3, 4])
    categories: Optional[list] = None
    out_dir: Optional[str] = None
    jobs: int = 1


class BenchRequest(CommonOptions):
    configs: Optional[list] = None
    n_images: int = 3
    repeats: int = 2
    seed: int = 0


class ErrorDetail(BaseModel):
    type: str
    message: str
