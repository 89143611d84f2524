"""Checkpoint-to-interchange conversion.

Maps the reference parameter naming onto the runtime's weight schema and
emits ``config.json`` plus ``weights.wctf`` (and the tokenizer's merge
table when one is supplied).  Only ViT image towers are supported.
"""

from __future__ import annotations

import json
import os
import shutil
from dataclasses import dataclass

import numpy as np
import torch

from .container import write_tensors
from .torch_clip import ClipArch, MiniClip, UnsupportedArchitecture, arch_from_state_dict

FORMAT_NAME = "winseg-encoder/1"
MERGES_NAME = "merges.txt.gz"


@dataclass
class ExportSpec:
    source: str                   # checkpoint path or open_clip "name:pretrained"
    out_dir: str
    vision_heads: int = 14
    text_heads: int = 10
    quick_gelu: bool = False
    merges_path: str = None       # BPE merge table to bundle
    context_length: int = None    # tokenizer context; defaults to the text tower's
    verify_images: int = 8


def _npy(tensor: torch.Tensor) -> np.ndarray:
    return tensor.detach().cpu().numpy()


def _block_tensors(prefix: str, blocks) -> dict:
    out = {}
    for i, block in enumerate(blocks):
        p = f"{prefix}.blocks.{i}"
        out[f"{p}.ln1.g"] = _npy(block.ln_1.weight)
        out[f"{p}.ln1.b"] = _npy(block.ln_1.bias)
        out[f"{p}.attn.in_w"] = _npy(block.attn.in_proj_weight)
        out[f"{p}.attn.in_b"] = _npy(block.attn.in_proj_bias)
        out[f"{p}.attn.out_w"] = _npy(block.attn.out_proj.weight)
        out[f"{p}.attn.out_b"] = _npy(block.attn.out_proj.bias)
        out[f"{p}.ln2.g"] = _npy(block.ln_2.weight)
        out[f"{p}.ln2.b"] = _npy(block.ln_2.bias)
        out[f"{p}.fc.w"] = _npy(block.mlp.c_fc.weight)
        out[f"{p}.fc.b"] = _npy(block.mlp.c_fc.bias)
        out[f"{p}.proj.w"] = _npy(block.mlp.c_proj.weight)
        out[f"{p}.proj.b"] = _npy(block.mlp.c_proj.bias)
    return out


def collect_tensors(model: MiniClip) -> dict:
    visual = model.visual
    arch = model.arch
    tensors = {
        "vision.patch_w": _npy(visual.conv1.weight).reshape(arch.vision_width, -1),
        "vision.class_emb": _npy(visual.class_embedding),
        "vision.pos_emb": _npy(visual.positional_embedding),
        "vision.ln_pre.g": _npy(visual.ln_pre.weight),
        "vision.ln_pre.b": _npy(visual.ln_pre.bias),
        "vision.ln_post.g": _npy(visual.ln_post.weight),
        "vision.ln_post.b": _npy(visual.ln_post.bias),
        "vision.proj": _npy(visual.proj),
        "text.tok_emb": _npy(model.token_embedding.weight),
        "text.pos_emb": _npy(model.positional_embedding),
        "text.ln_final.g": _npy(model.ln_final.weight),
        "text.ln_final.b": _npy(model.ln_final.bias),
        "text.proj": _npy(model.text_projection),
    }
    tensors.update(_block_tensors("vision", visual.transformer.resblocks))
    tensors.update(_block_tensors("text", model.transformer.resblocks))
    return tensors


def build_config(arch: ClipArch, spec: ExportSpec, source_name: str) -> dict:
    context = spec.context_length or arch.context_length
    if spec.merges_path:
        tokenizer = {"type": "bpe", "merges_file": MERGES_NAME,
                     "context_length": context}
    else:
        if arch.vocab_size < 256:
            raise UnsupportedArchitecture(
                f"vocab size {arch.vocab_size} cannot back the byte tokenizer; "
                "supply a merge table")
        tokenizer = {"type": "byte", "context_length": min(context, 64)}
    return {
        "format": FORMAT_NAME,
        "input_resolution": arch.image_size,
        "patch_size": arch.patch_size,
        "grid": [arch.grid, arch.grid],
        "d_image": arch.vision_width,
        "d_text": arch.embed_dim,
        "activation": "quick_gelu" if arch.quick_gelu else "gelu",
        "vision": {"layers": arch.vision_layers, "heads": arch.vision_heads},
        "text": {"layers": arch.text_layers, "heads": arch.text_heads,
                 "causal": True, "pool": "argmax_id"},
        "tokenizer": tokenizer,
        "source": source_name,
    }


def load_source(spec: ExportSpec) -> MiniClip:
    """Resolve the source: a checkpoint file, or an open_clip model id."""
    if os.path.exists(spec.source):
        state = torch.load(spec.source, map_location="cpu", weights_only=True)
        if "state_dict" in state:
            state = state["state_dict"]
        arch = arch_from_state_dict(state, spec.vision_heads, spec.text_heads,
                                    spec.quick_gelu)
        model = MiniClip(arch)
        model.load_state_dict(state)
        model.eval()
        return model
    try:
        import open_clip  # noqa: PLC0415 - optional, heavy
    except ImportError as exc:
        raise UnsupportedArchitecture(
            f"source {spec.source!r} is not a file and open_clip is not "
            "installed to resolve it as a model id") from exc
    name, _, pretrained = spec.source.partition(":")
    remote = open_clip.create_model(name, pretrained=pretrained or None)
    state = remote.state_dict()
    arch = arch_from_state_dict(state, spec.vision_heads, spec.text_heads,
                                spec.quick_gelu)
    model = MiniClip(arch)
    model.load_state_dict(state, strict=False)
    model.eval()
    return model


def export(spec: ExportSpec) -> str:
    """Write the interchange directory; returns its path."""
    model = load_source(spec)
    os.makedirs(spec.out_dir, exist_ok=True)
    config = build_config(model.arch, spec, source_name=os.path.basename(spec.source))
    with open(os.path.join(spec.out_dir, "config.json"), "w", encoding="utf-8") as fh:
        json.dump(config, fh, indent=2, sort_keys=True)
    write_tensors(os.path.join(spec.out_dir, "weights.wctf"), collect_tensors(model))
    if spec.merges_path:
        shutil.copyfile(spec.merges_path, os.path.join(spec.out_dir, MERGES_NAME))
    return spec.out_dir
