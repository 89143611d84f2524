"""FastAPI application exposing the scoring, few-shot and eval workflows.

Loaded encoders and built memories live in process-wide registries so a
long-running service pays model setup once and scores many queries.
"""

from __future__ import annotations

import base64
import io
import os
import tempfile
import threading
import uuid

from fastapi import FastAPI
from fastapi.responses import JSONResponse

from .. import __version__
from ..data import (
    PreprocessSpec,
    export_heatmap,
    load_manifest,
    preprocess,
    sample_references,
)
from ..encoders import resolve_model
from ..errors import ContractError, WinsegError
from ..memory import load_memory, save_memory
from ..pipeline import (
    RunConfig,
    bench,
    build_reference_memory,
    evaluate_dataset,
    make_prototypes,
    score_query,
)
from ..prompts import compose_prompts
from . import schemas

DEFAULT_MODEL_ENV = "WINSEG_MODEL_DIR"


class Registry:
    """Lazily resolved encoders, cached prototypes and built memories."""

    def __init__(self):
        self._lock = threading.Lock()
        self._encoders = {}
        self._memories = {}
        self._prototypes = {}

    def encoder(self, spec: str):
        with self._lock:
            if spec not in self._encoders:
                self._encoders[spec] = resolve_model(spec)
            return self._encoders[spec]

    def prototypes(self, encoder, config: RunConfig, object_label: str):
        key = (config.model, object_label, config.lexicon_path,
               config.lexicon_preset, config.template_preset, config.tau)
        with self._lock:
            cached = self._prototypes.get(key)
        if cached is not None:
            return cached
        built = make_prototypes(encoder, config, object_label)
        with self._lock:
            self._prototypes[key] = built
        return built

    def add_memory(self, memory) -> str:
        memory_id = uuid.uuid4().hex[:12]
        with self._lock:
            self._memories[memory_id] = memory
        return memory_id

    def memory(self, memory_id: str):
        with self._lock:
            if memory_id not in self._memories:
                raise ContractError(f"unknown memory id {memory_id!r}")
            return self._memories[memory_id]

    def loaded_models(self) -> dict:
        with self._lock:
            return {spec: enc.fingerprint() for spec, enc in self._encoders.items()}


def _config_from(request: schemas.CommonOptions) -> RunConfig:
    return RunConfig(
        model=request.model or default_model_spec(),
        object_label=request.object_label,
        lexicon_path=request.lexicon_path,
        lexicon_preset=request.lexicon_preset,
        template_preset=request.template_preset,
        kernels=tuple(request.kernels),
        include_image_scale=request.include_image_scale,
        tau=request.tau,
        multicrop=request.multicrop,
        fusion_weight=request.fusion_weight,
        language=request.language,
        memory_scales=tuple(request.memory_scales) if request.memory_scales else None,
        aggregation=request.aggregation,
        per_image_pixel_metrics=request.per_image_pixel_metrics,
    )


def default_model_spec() -> str:
    return os.environ.get(DEFAULT_MODEL_ENV) or "reference:0"


def _open_image(request, spec: PreprocessSpec):
    if request.image_path:
        return preprocess(request.image_path, spec)
    if request.image_b64:
        return preprocess(io.BytesIO(base64.b64decode(request.image_b64)), spec)
    raise ContractError("request needs image_path or image_b64")


def create_app() -> FastAPI:
    app = FastAPI(title="winseg", version=__version__)
    registry = Registry()
    app.state.registry = registry

    @app.exception_handler(WinsegError)
    async def _winseg_error(request, exc: WinsegError):  # noqa: ARG001
        detail = {"type": type(exc).__name__, "message": str(exc)}
        return JSONResponse(status_code=400, content={"detail": detail})

    @app.exception_handler(OSError)
    async def _os_error(request, exc: OSError):  # noqa: ARG001
        detail = {"type": "IOError", "message": str(exc)}
        return JSONResponse(status_code=400, content={"detail": detail})

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "version": __version__}

    @app.get("/models")
    def models():
        return {"default": default_model_spec(), "loaded": registry.loaded_models()}

    @app.post("/prompts", response_model=schemas.PromptsResponse)
    def prompts(request: schemas.PromptsRequest):
        config = RunConfig(
            lexicon_path=request.lexicon_path,
            lexicon_preset=request.lexicon_preset,
            template_preset=request.template_preset,
        )
        lexicon, templates = config.prompt_parts()
        composed = compose_prompts(request.object_label, lexicon, templates)
        return schemas.PromptsResponse(
            normal=composed["normal"],
            anomaly=composed["anomaly"],
            n_normal=len(composed["normal"]),
            n_anomaly=len(composed["anomaly"]),
        )

    def _score_common(request: schemas.ScoreRequest, memory):
        config = _config_from(request)
        encoder = registry.encoder(config.model)
        config.validate_against(encoder)
        spec = PreprocessSpec(target=encoder.config.input_resolution)
        pre = _open_image(request, spec)
        prototypes = None
        if config.language or memory is None:
            prototypes = registry.prototypes(encoder, config,
                                             config.object_label or "object")
        result = score_query(pre, encoder, config, prototypes=prototypes,
                             memory=memory, with_map=request.with_map)
        response = schemas.ScoreResponse(
            ascore=result.ascore,
            original_size=list(result.original_size),
            model_fingerprint=encoder.fingerprint(),
        )
        if result.pixel_map is not None and request.heatmap_path:
            export_heatmap(result.pixel_map, request.heatmap_path)
            response.heatmap_path = request.heatmap_path
        if result.pixel_map is not None and request.return_heatmap:
            with tempfile.NamedTemporaryFile(suffix=".png") as handle:
                export_heatmap(result.pixel_map, handle.name)
                handle.seek(0)
                response.heatmap_b64 = base64.b64encode(handle.read()).decode("ascii")
        return response

    @app.post("/score", response_model=schemas.ScoreResponse)
    def score(request: schemas.ScoreRequest):
        memory = registry.memory(request.memory_id) if request.memory_id else None
        return _score_common(request, memory)

    @app.post("/memory/build", response_model=schemas.MemoryResponse)
    def memory_build(request: schemas.MemoryBuildRequest):
        config = _config_from(request)
        encoder = registry.encoder(config.model)
        config.validate_against(encoder)
        if request.ref_paths:
            refs = list(request.ref_paths)
            seed = None
        else:
            if not request.root or not request.category:
                raise ContractError("memory build needs ref_paths or root+category")
            manifest = load_manifest(request.root, request.layout)
            refs = sample_references(manifest, request.category, request.k, request.seed)
            seed = request.seed
        memory = build_reference_memory(refs, encoder, config, seed=seed)
        if request.save_path:
            save_memory(memory, request.save_path)
        memory_id = registry.add_memory(memory)
        return schemas.MemoryResponse(
            memory_id=memory_id,
            bank_sizes=memory.bank_sizes,
            k_shots=memory.k_shots,
            seed=memory.seed,
            reference_ids=list(memory.reference_ids),
            encoder_fingerprint=memory.encoder_fingerprint,
            save_path=request.save_path,
        )

    @app.post("/memory/load", response_model=schemas.MemoryResponse)
    def memory_load(request: schemas.MemoryLoadRequest):
        memory = load_memory(request.path)
        memory_id = registry.add_memory(memory)
        return schemas.MemoryResponse(
            memory_id=memory_id,
            bank_sizes=memory.bank_sizes,
            k_shots=memory.k_shots,
            seed=memory.seed,
            reference_ids=list(memory.reference_ids),
            encoder_fingerprint=memory.encoder_fingerprint,
        )

    @app.post("/eval")
    def evaluate(request: schemas.EvalRequest):
        config = _config_from(request)
        config.layout = request.layout
        config.root = request.root
        config.jobs = request.jobs
        config.seeds = tuple(request.seeds)
        encoder = registry.encoder(config.model)
        manifest = load_manifest(request.root, request.layout)
        reports = {}
        for shots in request.shots:
            report = evaluate_dataset(manifest, encoder, config, shots,
                                      seeds=request.seeds,
                                      categories=request.categories)
            reports[str(shots)] = report
            if request.out_dir:
                os.makedirs(request.out_dir, exist_ok=True)
                report.write_json(os.path.join(request.out_dir, f"report_shots{shots}.json"))
                report.write_csv(os.path.join(request.out_dir, f"report_shots{shots}.csv"))
        return {"reports": {k: r.as_dict() for k, r in reports.items()},
                "out_dir": request.out_dir}

    @app.post("/bench")
    def run_bench(request: schemas.BenchRequest):
        config = _config_from(request)
        encoder = registry.encoder(config.model)
        rows = bench(encoder, config, configs=request.configs,
                     n_images=request.n_images, repeats=request.repeats,
                     seed=request.seed)
        return {"rows": rows, "model_fingerprint": encoder.fingerprint()}

    return app


app = create_app()
