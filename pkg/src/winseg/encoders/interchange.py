"""Loader for exported encoder directories.

An interchange directory holds ``config.json``, a ``weights.wctf`` tensor
container and any tokenizer assets the config refers to.  The weight
naming convention is documented in the README; the export utility in
this repository produces it from pretrained checkpoints.
"""

from __future__ import annotations

import hashlib
import json
import os

import numpy as np

from ..data import read_container, write_container
from ..errors import ConfigError
from . import nn
from .base import Encoder, EncoderConfig
from .tokenizers import ByteTokenizer, make_tokenizer
from .towers import TextTower, VisionTower

FORMAT_NAME = "winseg-encoder/1"
WEIGHTS_FILE = "weights.wctf"
CONFIG_FILE = "config.json"


def _require(weights: dict, name: str) -> np.ndarray:
    if name not in weights:
        raise ConfigError(f"weights container is missing tensor {name!r}")
    return np.asarray(weights[name], dtype=np.float64)


def _maybe(weights: dict, name: str):
    if name in weights:
        return np.asarray(weights[name], dtype=np.float64)
    return None


def _tower_blocks(weights: dict, prefix: str, layers: int, heads: int):
    blocks = []
    for i in range(layers):
        p = f"{prefix}.blocks.{i}"
        blocks.append(nn.BlockWeights(
            ln1_g=_require(weights, f"{p}.ln1.g"),
            ln1_b=_require(weights, f"{p}.ln1.b"),
            attn=nn.AttentionWeights(
                in_w=_require(weights, f"{p}.attn.in_w"),
                in_b=_require(weights, f"{p}.attn.in_b"),
                out_w=_require(weights, f"{p}.attn.out_w"),
                out_b=_require(weights, f"{p}.attn.out_b"),
                n_heads=heads,
            ),
            ln2_g=_require(weights, f"{p}.ln2.g"),
            ln2_b=_require(weights, f"{p}.ln2.b"),
            fc_w=_require(weights, f"{p}.fc.w"),
            fc_b=_require(weights, f"{p}.fc.b"),
            proj_w=_require(weights, f"{p}.proj.w"),
            proj_b=_require(weights, f"{p}.proj.b"),
        ))
    return blocks


class InterchangeEncoder(Encoder):
    def __init__(self, *args, fingerprint_value: str, **kwargs):
        super().__init__(*args, **kwargs)
        self._fingerprint = fingerprint_value

    def fingerprint(self) -> str:
        return self._fingerprint


def load_interchange(model_dir: str) -> Encoder:
    """Instantiate an encoder from an exported model directory."""
    config_path = os.path.join(model_dir, CONFIG_FILE)
    weights_path = os.path.join(model_dir, WEIGHTS_FILE)
    if not os.path.exists(config_path):
        raise ConfigError(f"missing {CONFIG_FILE} in {model_dir!r}")
    if not os.path.exists(weights_path):
        raise ConfigError(f"missing {WEIGHTS_FILE} in {model_dir!r}")
    with open(config_path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if raw.get("format") != FORMAT_NAME:
        raise ConfigError(f"unsupported interchange format {raw.get('format')!r}")

    config = EncoderConfig(
        input_resolution=int(raw["input_resolution"]),
        patch_size=int(raw["patch_size"]),
        grid=tuple(raw["grid"]),
        d_image=int(raw["d_image"]),
        d_text=int(raw["d_text"]),
    )
    activation = raw.get("activation", "gelu")
    if activation not in nn.ACTIVATIONS:
        raise ConfigError(f"unknown activation {activation!r}")
    vcfg = raw["vision"]
    tcfg = raw["text"]
    weights = read_container(weights_path)

    vision = VisionTower(
        patch_size=config.patch_size,
        grid=tuple(config.grid),
        patch_w=_require(weights, "vision.patch_w"),
        patch_b=_maybe(weights, "vision.patch_b"),
        class_emb=_require(weights, "vision.class_emb"),
        pos_emb=_require(weights, "vision.pos_emb"),
        blocks=_tower_blocks(weights, "vision", int(vcfg["layers"]), int(vcfg["heads"])),
        ln_pre_g=_maybe(weights, "vision.ln_pre.g"),
        ln_pre_b=_maybe(weights, "vision.ln_pre.b"),
        ln_post_g=_require(weights, "vision.ln_post.g"),
        ln_post_b=_require(weights, "vision.ln_post.b"),
        proj=_require(weights, "vision.proj"),
        activation=activation,
    )
    if vision.patch_w.shape != (config.d_image, 3 * config.patch_size ** 2):
        raise ConfigError(
            f"vision.patch_w shape {vision.patch_w.shape} does not match "
            f"width {config.d_image} and patch size {config.patch_size}"
        )
    if vision.pos_emb.shape[0] != config.n_patches + 1:
        raise ConfigError(
            f"vision.pos_emb rows {vision.pos_emb.shape[0]} != 1 + {config.n_patches} patches"
        )
    text = TextTower(
        tok_emb=_require(weights, "text.tok_emb"),
        pos_emb=_require(weights, "text.pos_emb"),
        blocks=_tower_blocks(weights, "text", int(tcfg["layers"]), int(tcfg["heads"])),
        ln_final_g=_require(weights, "text.ln_final.g"),
        ln_final_b=_require(weights, "text.ln_final.b"),
        proj=_require(weights, "text.proj"),
        activation=activation,
        causal=bool(tcfg.get("causal", True)),
        pool=tcfg.get("pool", "argmax_id"),
    )
    tokenizer = make_tokenizer(raw["tokenizer"], model_dir=model_dir)

    digest = hashlib.sha256()
    with open(config_path, "rb") as fh:
        digest.update(fh.read())
    with open(weights_path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    name = raw.get("source", os.path.basename(os.path.normpath(model_dir)))
    return InterchangeEncoder(
        config, vision, text, tokenizer, name=f"interchange:{name}",
        fingerprint_value=f"interchange:{digest.hexdigest()[:16]}",
    )


def _block_tensors(prefix: str, blocks) -> dict:
    out = {}
    for i, blk in enumerate(blocks):
        p = f"{prefix}.blocks.{i}"
        out[f"{p}.ln1.g"] = blk.ln1_g
        out[f"{p}.ln1.b"] = blk.ln1_b
        out[f"{p}.attn.in_w"] = blk.attn.in_w
        out[f"{p}.attn.in_b"] = blk.attn.in_b
        out[f"{p}.attn.out_w"] = blk.attn.out_w
        out[f"{p}.attn.out_b"] = blk.attn.out_b
        out[f"{p}.ln2.g"] = blk.ln2_g
        out[f"{p}.ln2.b"] = blk.ln2_b
        out[f"{p}.fc.w"] = blk.fc_w
        out[f"{p}.fc.b"] = blk.fc_b
        out[f"{p}.proj.w"] = blk.proj_w
        out[f"{p}.proj.b"] = blk.proj_b
    return out


def write_interchange(encoder: Encoder, model_dir: str, source: str = None,
                      tokenizer_spec: dict = None) -> str:
    """Serialize an encoder into an interchange directory.

    Weights round-trip through the container's float32 payload, so a
    reloaded encoder agrees with the original to storage precision only.
    """
    os.makedirs(model_dir, exist_ok=True)
    vision = encoder.vision
    text = encoder.text
    if tokenizer_spec is None:
        if not isinstance(encoder.tokenizer, ByteTokenizer):
            raise ConfigError("tokenizer_spec required for non-byte tokenizers")
        tokenizer_spec = {"type": "byte",
                          "context_length": encoder.tokenizer.context_length}
    config = {
        "format": FORMAT_NAME,
        "input_resolution": encoder.config.input_resolution,
        "patch_size": encoder.config.patch_size,
        "grid": list(encoder.config.grid),
        "d_image": encoder.config.d_image,
        "d_text": encoder.config.d_text,
        "activation": vision.activation,
        "vision": {
            "layers": len(vision.blocks),
            "heads": vision.blocks[0].attn.n_heads,
        },
        "text": {
            "layers": len(text.blocks),
            "heads": text.blocks[0].attn.n_heads,
            "causal": text.causal,
            "pool": text.pool,
        },
        "tokenizer": tokenizer_spec,
        "source": source or encoder.name,
    }
    tensors = {
        "vision.patch_w": vision.patch_w,
        "vision.class_emb": vision.class_emb,
        "vision.pos_emb": vision.pos_emb,
        "vision.ln_post.g": vision.ln_post_g,
        "vision.ln_post.b": vision.ln_post_b,
        "vision.proj": vision.proj,
        "text.tok_emb": text.tok_emb,
        "text.pos_emb": text.pos_emb,
        "text.ln_final.g": text.ln_final_g,
        "text.ln_final.b": text.ln_final_b,
        "text.proj": text.proj,
    }
    if vision.patch_b is not None:
        tensors["vision.patch_b"] = vision.patch_b
    if vision.ln_pre_g is not None:
        tensors["vision.ln_pre.g"] = vision.ln_pre_g
        tensors["vision.ln_pre.b"] = vision.ln_pre_b
    tensors.update(_block_tensors("vision", vision.blocks))
    tensors.update(_block_tensors("text", text.blocks))
    with open(os.path.join(model_dir, CONFIG_FILE), "w", encoding="utf-8") as fh:
        json.dump(config, fh, indent=2, sort_keys=True)
    write_container(os.path.join(model_dir, WEIGHTS_FILE), tensors)
    return model_dir
