"""Encoder backends: deterministic reference towers and exported models."""

from .base import Encoder, EncoderConfig, PatchFeatureMap, TokenWork, WindowMask
from .interchange import load_interchange
from .reference import default_reference_config, reference_encoder

__all__ = [
    "Encoder",
    "EncoderConfig",
    "PatchFeatureMap",
    "TokenWork",
    "WindowMask",
    "default_reference_config",
    "load_interchange",
    "reference_encoder",
    "resolve_model",
]


def resolve_model(spec: str) -> Encoder:
    """Turn a model spec string into an encoder.

    ``reference:<seed>`` builds the deterministic test encoder; anything
    else is treated as an interchange directory path.
    """
    if spec.startswith("reference:"):
        return reference_encoder(seed=int(spec.split(":", 1)[1]))
    if spec == "reference":
        return reference_encoder()
    return load_interchange(spec)
