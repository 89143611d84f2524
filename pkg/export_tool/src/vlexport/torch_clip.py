"""Minimal torch implementation of the two-tower contrastive architecture.

Parameter names follow the open-source reference implementations
(``visual.conv1.weight``, ``transformer.resblocks.N.attn.in_proj_weight``,
...), so real checkpoints load directly.  The forward passes here serve
as the source-of-truth the exported directory is verified against,
including a keep-index forward for the dropped-patch contract.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn


@dataclass
class ClipArch:
    image_size: int = 240
    patch_size: int = 16
    vision_width: int = 896
    vision_layers: int = 12
    vision_heads: int = 14
    embed_dim: int = 640
    text_width: int = 640
    text_layers: int = 12
    text_heads: int = 10
    context_length: int = 77
    vocab_size: int = 49408
    quick_gelu: bool = False

    @property
    def grid(self) -> int:
        if self.image_size % self.patch_size:
            raise ValueError("image size must be a multiple of the patch size")
        return self.image_size // self.patch_size


def _act(quick: bool):
    if quick:
        return lambda x: x * torch.sigmoid(1.702 * x)
    return nn.functional.gelu


class ResidualBlock(nn.Module):
    def __init__(self, width: int, heads: int, quick_gelu: bool):
        super().__init__()
        self.ln_1 = nn.LayerNorm(width)
        self.attn = nn.MultiheadAttention(width, heads, batch_first=False)
        self.ln_2 = nn.LayerNorm(width)
        self.mlp = nn.Sequential()
        self.mlp.add_module("c_fc", nn.Linear(width, width * 4))
        self.mlp.add_module("c_proj", nn.Linear(width * 4, width))
        self._quick = quick_gelu

    def forward(self, x, attn_mask=None):
        y = self.ln_1(x)
        y, _ = self.attn(y, y, y, need_weights=False, attn_mask=attn_mask)
        x = x + y
        y = self.ln_2(x)
        y = self.mlp.c_proj(_act(self._quick)(self.mlp.c_fc(y)))
        return x + y


class Transformer(nn.Module):
    def __init__(self, width: int, layers: int, heads: int, quick_gelu: bool):
        super().__init__()
        self.resblocks = nn.ModuleList(
            ResidualBlock(width, heads, quick_gelu) for _ in range(layers))

    def forward(self, x, attn_mask=None):
        for block in self.resblocks:
            x = block(x, attn_mask=attn_mask)
        return x


class VisualTransformer(nn.Module):
    def __init__(self, arch: ClipArch):
        super().__init__()
        w = arch.vision_width
        self.conv1 = nn.Conv2d(3, w, kernel_size=arch.patch_size,
                               stride=arch.patch_size, bias=False)
        scale = w ** -0.5
        self.class_embedding = nn.Parameter(scale * torch.randn(w))
        self.positional_embedding = nn.Parameter(
            scale * torch.randn(arch.grid ** 2 + 1, w))
        self.ln_pre = nn.LayerNorm(w)
        self.transformer = Transformer(w, arch.vision_layers, arch.vision_heads,
                                       arch.quick_gelu)
        self.ln_post = nn.LayerNorm(w)
        self.proj = nn.Parameter(scale * torch.randn(w, arch.embed_dim))

    def forward(self, images, keep_indices=None):
        """Global embedding; keep_indices restricts which patches take part."""
        x = self.conv1(images)                      # (B, w, G, G)
        x = x.flatten(2).transpose(1, 2)            # (B, N, w)
        if keep_indices is not None:
            pos = self.positional_embedding[1 + keep_indices]
            x = torch.gather(
                x, 1, keep_indices.unsqueeze(-1).expand(-1, -1, x.shape[-1]))
            x = x + pos
        else:
            x = x + self.positional_embedding[1:]
        cls = (self.class_embedding + self.positional_embedding[0]).expand(
            x.shape[0], 1, -1)
        x = torch.cat([cls, x], dim=1)
        x = self.ln_pre(x)
        x = self.transformer(x.transpose(0, 1)).transpose(0, 1)
        pooled = self.ln_post(x[:, 0, :])
        return pooled @ self.proj


class MiniClip(nn.Module):
    """Loadable stand-in for the reference two-tower checkpoint format."""

    def __init__(self, arch: ClipArch):
        super().__init__()
        self.arch = arch
        self.visual = VisualTransformer(arch)
        self.token_embedding = nn.Embedding(arch.vocab_size, arch.text_width)
        self.positional_embedding = nn.Parameter(
            0.01 * torch.randn(arch.context_length, arch.text_width))
        self.transformer = Transformer(arch.text_width, arch.text_layers,
                                       arch.text_heads, arch.quick_gelu)
        self.ln_final = nn.LayerNorm(arch.text_width)
        self.text_projection = nn.Parameter(
            arch.text_width ** -0.5 * torch.randn(arch.text_width, arch.embed_dim))
        self.logit_scale = nn.Parameter(torch.tensor(math.log(1 / 0.07)))

    def causal_mask(self, length: int):
        mask = torch.full((length, length), float("-inf"))
        return torch.triu(mask, diagonal=1)

    def encode_image(self, images, keep_indices=None):
        out = self.visual(images, keep_indices=keep_indices)
        return out / out.norm(dim=-1, keepdim=True)

    def encode_text(self, token_ids):
        """token_ids: (B, L) padded with zeros after the end marker."""
        x = self.token_embedding(token_ids) + self.positional_embedding[: token_ids.shape[1]]
        x = self.transformer(x.transpose(0, 1),
                             attn_mask=self.causal_mask(token_ids.shape[1])).transpose(0, 1)
        x = self.ln_final(x)
        pooled = x[torch.arange(x.shape[0]), token_ids.argmax(dim=-1)]
        out = pooled @ self.text_projection
        return out / out.norm(dim=-1, keepdim=True)


def arch_from_state_dict(state: dict, vision_heads: int, text_heads: int,
                         quick_gelu: bool = False) -> ClipArch:
    """Recover the architecture hyperparameters a state dict implies."""
    if "visual.conv1.weight" not in state:
        raise UnsupportedArchitecture(
            "only ViT image towers are supported (no visual.conv1.weight found)")
    conv = state["visual.conv1.weight"]
    vision_width, _, patch, _ = conv.shape
    n_pos = state["visual.positional_embedding"].shape[0]
    grid = int(math.isqrt(n_pos - 1))
    if grid * grid != n_pos - 1:
        raise UnsupportedArchitecture(f"non-square patch grid ({n_pos - 1} positions)")
    vision_layers = 1 + max(
        int(k.split(".")[3]) for k in state
        if k.startswith("visual.transformer.resblocks."))
    text_layers = 1 + max(
        int(k.split(".")[2]) for k in state
        if k.startswith("transformer.resblocks."))
    return ClipArch(
        image_size=grid * patch,
        patch_size=patch,
        vision_width=vision_width,
        vision_layers=vision_layers,
        vision_heads=vision_heads,
        embed_dim=state["text_projection"].shape[1],
        text_width=state["token_embedding.weight"].shape[1],
        text_layers=text_layers,
        text_heads=text_heads,
        context_length=state["positional_embedding"].shape[0],
        vocab_size=state["token_embedding.weight"].shape[0],
        quick_gelu=quick_gelu,
    )


class UnsupportedArchitecture(ValueError):
    pass


def load_checkpoint(path: str, vision_heads: int, text_heads: int,
                    quick_gelu: bool = False) -> MiniClip:
    state = torch.load(path, map_location="cpu", weights_only=True)
    if "state_dict" in state:
        state = state["state_dict"]
    arch = arch_from_state_dict(state, vision_heads, text_heads, quick_gelu)
    model = MiniClip(arch)
    model.load_state_dict(state)
    model.eval()
    return model
