"""Zero-/few-shot anomaly classification and segmentation toolkit."""

__version__ = "0.1.0"

from .encoders import (
    Encoder,
    EncoderConfig,
    PatchFeatureMap,
    WindowMask,
    load_interchange,
    reference_encoder,
    resolve_model,
)
from .prompts import (
    ClassPrototypes,
    StateLexicon,
    TemplateSet,
    build_prototypes,
    compose_prompts,
    one_class_score,
    zero_shot_score,
)
from .windows import (
    CropScheme,
    ScaleSet,
    ScoreMap,
    WindowPlan,
    gen_windows,
    harmonic_aggregate,
    multiscale_zero_shot_map,
    patch_token_map,
    upsample_map,
    window_scores,
    zero_shot_classify,
)
from .memory import (
    FusedScores,
    ReferenceMemory,
    associate,
    build_memory,
    classify_plus,
    fuse_scales,
    load_memory,
    save_memory,
    segment_plus,
)
from .metrics import (
    EvalReport,
    LabeledScores,
    SegPair,
    aggregate_runs,
    aupr,
    auroc,
    f1_max,
    pixel_auroc,
    pro,
)
from .data import (
    DatasetManifest,
    PreprocessSpec,
    TilePlan,
    export_heatmap,
    load_manifest,
    merge_tile_predictions,
    plan_tiles,
    preprocess,
    read_container,
    sample_references,
    write_container,
)
