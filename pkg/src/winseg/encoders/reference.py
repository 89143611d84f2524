"""Deterministic random-weight encoder used for tests and offline runs.

Weights are drawn once from a PCG64 stream keyed by the seed, so two
encoders with the same seed are bit-identical.  The towers are small
(two attention blocks each) but structurally faithful, which keeps the
window-locality and dropped-token contracts meaningful.
"""

from __future__ import annotations

import numpy as np

from . import nn
from .base import Encoder, EncoderConfig
from .tokenizers import ByteTokenizer
from .towers import TextTower, VisionTower

D_MODEL = 64
N_LAYERS = 2
N_HEADS = 4
MLP_RATIO = 2
TEXT_CONTEXT = 64


def _blocks(rng, d, layers):
    d_mlp = d * MLP_RATIO
    heads = N_HEADS if d % N_HEADS == 0 else 1
    out = []
    for _ in range(layers):
        out.append(nn.BlockWeights(
            ln1_g=np.ones(d), ln1_b=np.zeros(d),
            attn=nn.AttentionWeights(
                in_w=rng.standard_normal((3 * d, d)) / np.sqrt(d),
                in_b=rng.standard_normal(3 * d) * 0.02,
                out_w=rng.standard_normal((d, d)) / np.sqrt(d),
                out_b=rng.standard_normal(d) * 0.02,
                n_heads=heads,
            ),
            ln2_g=np.ones(d), ln2_b=np.zeros(d),
            fc_w=rng.standard_normal((d_mlp, d)) / np.sqrt(d),
            fc_b=rng.standard_normal(d_mlp) * 0.02,
            proj_w=rng.standard_normal((d, d_mlp)) / np.sqrt(d_mlp),
            proj_b=rng.standard_normal(d) * 0.02,
        ))
    return out


def default_reference_config() -> EncoderConfig:
    """Reference profile: spec geometry, small tower width, joint dim 640."""
    return EncoderConfig(input_resolution=240, patch_size=16, grid=(15, 15),
                         d_image=D_MODEL, d_text=640)


def reference_encoder(seed: int = 0, config: EncoderConfig = None) -> Encoder:
    """Build the deterministic test encoder for a seed and profile.

    config.d_image sets the tower width; embeddings land in d_text.
    """
    config = config or default_reference_config()
    rng = np.random.Generator(np.random.PCG64(seed))
    p = config.patch_size
    n_patches = config.n_patches
    d = config.d_image

    vision = VisionTower(
        patch_size=p,
        grid=tuple(config.grid),
        patch_w=rng.standard_normal((d, 3 * p * p)) / np.sqrt(3 * p * p),
        class_emb=rng.standard_normal(d) * 0.5,
        pos_emb=rng.standard_normal((1 + n_patches, d)) * 0.5,
        blocks=_blocks(rng, d, N_LAYERS),
        ln_post_g=np.ones(d), ln_post_b=np.zeros(d),
        proj=rng.standard_normal((d, config.d_text)) / np.sqrt(d),
        activation="gelu",
    )
    text = TextTower(
        tok_emb=rng.standard_normal((ByteTokenizer.vocab_size, d)) * 0.5,
        pos_emb=rng.standard_normal((TEXT_CONTEXT, d)) * 0.5,
        blocks=_blocks(rng, d, N_LAYERS),
        ln_final_g=np.ones(d), ln_final_b=np.zeros(d),
        proj=rng.standard_normal((d, config.d_text)) / np.sqrt(d),
        activation="gelu",
        causal=False,
        pool="mean",
    )
    encoder = ReferenceEncoder(config, vision, text, ByteTokenizer(TEXT_CONTEXT),
                               name=f"reference:{seed}")
    encoder.seed = seed
    return encoder


class ReferenceEncoder(Encoder):
    def fingerprint(self) -> str:
        gh, gw = self.config.grid
        return (f"{self.name}/r{self.config.input_resolution}p{self.config.patch_size}"
                f"g{gh}x{gw}d{self.config.d_image}t{self.config.d_text}")
